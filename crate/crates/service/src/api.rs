//! Routes. Every mutation locks the campaign, so requests are applied one at
//! a time in arrival order; a refit holds the lock for its whole run and
//! queues everything behind it. Embedding reads bypass the lock.

use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use narrative_core::campaign::PublicQuestion;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::state::{Campaign, RefitRequest, Snapshot};
use crate::ServiceError;

#[derive(Clone)]
pub struct AppState {
    campaign: Arc<Mutex<Campaign>>,
    published: Arc<RwLock<Arc<Snapshot>>>,
    labels: Arc<Vec<u32>>,
}

impl AppState {
    pub fn new(campaign: Campaign) -> Self {
        AppState {
            published: campaign.published(),
            labels: Arc::new(campaign.labels().to_vec()),
            campaign: Arc::new(Mutex::new(campaign)),
        }
    }

    pub fn campaign(&self) -> Arc<Mutex<Campaign>> {
        self.campaign.clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/workers", post(create_worker))
        .route("/pretest", get(get_pretest).post(post_pretest))
        .route("/hits/next", get(next_hit))
        .route("/hits/{hit_id}/responses", post(submit))
        .route("/state/embedding", get(embedding))
        .route("/admin/refit", post(refit))
        .route("/admin/metrics", get(metrics))
        .with_state(state)
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Forbidden(_) => StatusCode::FORBIDDEN,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

type ApiResult<T> = Result<T, ServiceError>;

fn body<T>(b: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    b.map(|Json(v)| v).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

#[derive(Serialize, Deserialize)]
pub struct WorkerCreated {
    pub worker_id: String,
}

#[derive(Serialize, Deserialize)]
pub struct WorkerQuery {
    pub worker_id: String,
}

#[derive(Serialize, Deserialize)]
pub struct PretestQuestions {
    pub questions: Vec<PublicQuestion>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretestAnswers {
    pub worker_id: String,
    pub answers: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
pub struct PretestOutcome {
    pub score: usize,
    pub qualified: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub worker_id: String,
    pub selections: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
pub struct EmbeddingView {
    pub version: u64,
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
    pub coordinates: Vec<Vec<f64>>,
    pub class_ids: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
pub struct RefitDone {
    pub new_version: u64,
}

async fn create_worker(State(s): State<AppState>) -> ApiResult<Json<WorkerCreated>> {
    let worker_id = s.campaign.lock().await.register_worker()?;
    Ok(Json(WorkerCreated { worker_id }))
}

async fn get_pretest(
    State(s): State<AppState>,
    q: Result<Query<WorkerQuery>, QueryRejection>,
) -> ApiResult<Json<PretestQuestions>> {
    let q = query(q)?;
    let questions = s.campaign.lock().await.pretest_questions(&q.worker_id)?;
    Ok(Json(PretestQuestions { questions }))
}

async fn post_pretest(
    State(s): State<AppState>,
    b: Result<Json<PretestAnswers>, JsonRejection>,
) -> ApiResult<Json<PretestOutcome>> {
    let b = body(b)?;
    let record = s.campaign.lock().await.submit_pretest(&b.worker_id, b.answers)?;
    Ok(Json(PretestOutcome {
        score: record.pretest_score.unwrap_or(0),
        qualified: record.qualified,
    }))
}

async fn next_hit(State(s): State<AppState>, q: Result<Query<WorkerQuery>, QueryRejection>) -> ApiResult<Response> {
    let q = query(q)?;
    let payload = s.campaign.lock().await.next_hit(&q.worker_id)?;
    Ok(Json(payload).into_response())
}

async fn submit(
    State(s): State<AppState>,
    Path(hit_id): Path<String>,
    b: Result<Json<Submission>, JsonRejection>,
) -> ApiResult<Response> {
    let b = body(b)?;
    let done = s.campaign.lock().await.submit(&hit_id, &b.worker_id, b.selections)?;
    let status = if done.duplicate {
        StatusCode::CONFLICT
    } else {
        StatusCode::OK
    };
    Ok((status, Json(done.result)).into_response())
}

async fn embedding(State(s): State<AppState>) -> ApiResult<Json<EmbeddingView>> {
    let snap = s.published.read().unwrap_or_else(|e| e.into_inner()).clone();
    let y = snap.embedding.matrix();
    Ok(Json(EmbeddingView {
        version: snap.version,
        n: y.rows(),
        d: y.cols(),
        coordinates: y.iter_rows().map(<[f64]>::to_vec).collect(),
        class_ids: s.labels.to_vec(),
    }))
}

async fn refit(State(s): State<AppState>, b: Result<Json<RefitRequest>, JsonRejection>) -> ApiResult<Json<RefitDone>> {
    let req = body(b)?;
    let mut guard = s.campaign.clone().lock_owned().await;
    let new_version = tokio::task::spawn_blocking(move || guard.refit(req))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(RefitDone { new_version }))
}

async fn metrics(State(s): State<AppState>) -> ApiResult<Response> {
    let guard = s.campaign.clone().lock_owned().await;
    let report = tokio::task::spawn_blocking(move || guard.metrics())
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(report).into_response())
}

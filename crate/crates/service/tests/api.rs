mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use narrative_service::state::{HitPayload, SubmitResult, RESPONSES_FILE};
use narrative_service::{router, AppState, Campaign};
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{answer, config, FAILING, PASSING};

struct Harness {
    app: Router,
    state: AppState,
    _dir: tempfile::TempDir,
    data: std::path::PathBuf,
}

fn harness(sentinel_rate: f64) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), sentinel_rate);
    let data = cfg.data_dir.clone();
    let state = AppState::new(Campaign::open(cfg).unwrap());
    Harness {
        app: router(state.clone()),
        state,
        _dir: dir,
        data,
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn qualified_worker(app: &Router) -> String {
    let (s, v) = call(app, "POST", "/workers", None).await;
    assert_eq!(s, StatusCode::OK);
    let w = v["worker_id"].as_str().unwrap().to_string();
    let (s, v) = call(app, "POST", "/pretest", Some(json!({"worker_id": w, "answers": PASSING}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"score": 5, "qualified": true}));
    w
}

async fn fetch_hit(h: &Harness, w: &str) -> (String, Vec<Vec<usize>>) {
    let (s, v) = call(&h.app, "GET", &format!("/hits/next?worker_id={w}"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let payload: HitPayload = serde_json::from_value(v).unwrap();
    let campaign = h.state.campaign();
    let c = campaign.lock().await;
    let sel = answer(c.hit(&payload.hit_id).unwrap(), c.labels());
    (payload.hit_id, sel)
}

fn keys(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                out.push(k.clone());
                keys(v, out);
            }
        }
        Value::Array(a) => a.iter().for_each(|v| keys(v, out)),
        _ => {}
    }
}

#[tokio::test]
async fn happy_path_yields_66_triplets() {
    let h = harness(0.0);
    let (_, v) = call(&h.app, "POST", "/workers", None).await;
    let w = v["worker_id"].as_str().unwrap().to_string();

    let (s, v) = call(&h.app, "GET", &format!("/pretest?worker_id={w}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["questions"].as_array().unwrap().len(), 5);
    let mut k = Vec::new();
    keys(&v, &mut k);
    assert!(!k.iter().any(|k| k == "correct"), "answers leaked: {k:?}");

    let (_, v) = call(&h.app, "POST", "/pretest", Some(json!({"worker_id": w, "answers": PASSING}))).await;
    assert_eq!(v["qualified"], true);

    let (hit_id, sel) = fetch_hit(&h, &w).await;
    let (s, v) = call(
        &h.app,
        "POST",
        &format!("/hits/{hit_id}/responses"),
        Some(json!({"worker_id": w, "selections": sel})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let r: SubmitResult = serde_json::from_value(v).unwrap();
    assert_eq!(r.accepted_grid_count, 11);
    assert_eq!(r.triplets_added, 66);
    assert_eq!(serde_json::to_value(r.catch_grade).unwrap(), "both");

    let log = std::fs::read_to_string(h.data.join(RESPONSES_FILE)).unwrap();
    assert_eq!(log.lines().count(), 12);
    for line in log.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        for field in ["worker_id", "hit_id", "grid", "selected", "timestamp"] {
            assert!(rec.get(field).is_some(), "missing {field} in {line}");
        }
    }
    assert_eq!(h.state.campaign().lock().await.triplets().len(), 66);
}

#[tokio::test]
async fn hit_payload_hides_grid_kinds() {
    let h = harness(0.5);
    let w = qualified_worker(&h.app).await;
    let (s, v) = call(&h.app, "GET", &format!("/hits/next?worker_id={w}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let mut k = Vec::new();
    keys(&v, &mut k);
    k.sort();
    k.dedup();
    assert_eq!(k, ["anchor", "candidates", "grids", "hit_id", "selections_per_grid"]);
    let payload: HitPayload = serde_json::from_value(v).unwrap();
    assert_eq!(payload.grids.len(), 12);
    assert!(payload.grids.iter().all(|g| g.candidates.len() == 5));

    // The sentinel text is shown in place of the replaced candidate.
    let campaign = h.state.campaign();
    let c = campaign.lock().await;
    let hit = c.hit(&payload.hit_id).unwrap();
    for (g, shown) in hit.grids.iter().zip(&payload.grids) {
        if let (Some(slot), Some(text)) = (g.sentinel_slot, &g.sentinel_text) {
            assert_eq!(&shown.candidates[slot], text);
        }
    }
}

#[tokio::test]
async fn repeated_fetch_returns_the_open_hit() {
    let h = harness(0.0);
    let w = qualified_worker(&h.app).await;
    let (_, a) = call(&h.app, "GET", &format!("/hits/next?worker_id={w}"), None).await;
    let (_, b) = call(&h.app, "GET", &format!("/hits/next?worker_id={w}"), None).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn exactly_two_selections_per_grid() {
    let h = harness(0.0);
    let w = qualified_worker(&h.app).await;
    let (hit_id, good) = fetch_hit(&h, &w).await;
    let uri = format!("/hits/{hit_id}/responses");

    let mut cases = Vec::new();
    for bad in [vec![0], vec![0, 1, 2], vec![], vec![3, 3], vec![0, 5]] {
        let mut sel = good.clone();
        sel[4] = bad;
        cases.push(json!({"worker_id": w, "selections": sel}));
    }
    cases.push(json!({"worker_id": w, "selections": &good[..11]}));
    cases.push(json!({"worker_id": w}));
    cases.push(json!({"worker_id": w, "selections": "all"}));
    for body in cases {
        let (s, v) = call(&h.app, "POST", &uri, Some(body.clone())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body} -> {v}");
    }

    let req = Request::post(&uri)
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(h.app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);

    // Nothing was logged by the rejected attempts; the valid one still goes through.
    assert!(h.state.campaign().lock().await.responses().is_empty());
    let (s, _) = call(&h.app, "POST", &uri, Some(json!({"worker_id": w, "selections": good}))).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn unqualified_workers_are_refused() {
    let h = harness(0.0);
    let (_, v) = call(&h.app, "POST", "/workers", None).await;
    let w = v["worker_id"].as_str().unwrap().to_string();
    let (s, _) = call(&h.app, "GET", &format!("/hits/next?worker_id={w}"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);

    let (s, v) = call(&h.app, "POST", "/pretest", Some(json!({"worker_id": w, "answers": FAILING}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"score": 3, "qualified": false}));
    let (s, _) = call(&h.app, "GET", &format!("/hits/next?worker_id={w}"), None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);

    let (s, _) = call(&h.app, "POST", "/pretest", Some(json!({"worker_id": w, "answers": [0, 1]}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&h.app, "POST", "/pretest", Some(json!({"worker_id": w, "answers": [0, 1, 0, 1, 7]}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let h = harness(0.0);
    let (s, _) = call(&h.app, "GET", "/pretest?worker_id=ghost", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&h.app, "GET", "/hits/next?worker_id=ghost", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&h.app, "GET", "/hits/next", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let w = qualified_worker(&h.app).await;
    let other = qualified_worker(&h.app).await;
    let (hit_id, sel) = fetch_hit(&h, &w).await;
    let body = json!({"worker_id": w, "selections": sel});
    let (s, _) = call(&h.app, "POST", "/hits/hit-999999/responses", Some(body)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    // A HIT belongs to the worker it was issued to.
    let body = json!({"worker_id": other, "selections": sel});
    let (s, _) = call(&h.app, "POST", &format!("/hits/{hit_id}/responses"), Some(body)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn resubmission_is_idempotent() {
    let h = harness(0.0);
    let w = qualified_worker(&h.app).await;
    let (hit_id, sel) = fetch_hit(&h, &w).await;
    let uri = format!("/hits/{hit_id}/responses");
    let (s1, first) = call(&h.app, "POST", &uri, Some(json!({"worker_id": w, "selections": sel}))).await;
    assert_eq!(s1, StatusCode::OK);

    let mut other = sel.clone();
    other[0] = vec![3, 4];
    let (s2, second) = call(&h.app, "POST", &uri, Some(json!({"worker_id": w, "selections": other}))).await;
    assert_eq!(s2, StatusCode::CONFLICT);
    assert_eq!(first, second);

    let campaign = h.state.campaign();
    let c = campaign.lock().await;
    assert_eq!(c.triplets().len(), 66);
    assert_eq!(c.responses().len(), 12);
    assert_eq!(c.workers()[&w].hits_completed, 1);
}

#[tokio::test]
async fn embedding_refit_and_metrics() {
    let h = harness(0.0);
    let (s, v) = call(&h.app, "GET", "/state/embedding", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["version"].as_u64(), v["N"].as_u64(), v["d"].as_u64()), (Some(0), Some(600), Some(2)));
    assert_eq!(v["coordinates"].as_array().unwrap().len(), 600);
    assert_eq!(v["class_ids"].as_array().unwrap().len(), 600);

    let w = qualified_worker(&h.app).await;
    let (hit_id, sel) = fetch_hit(&h, &w).await;
    call(&h.app, "POST", &format!("/hits/{hit_id}/responses"), Some(json!({"worker_id": w, "selections": sel}))).await;

    let (s, v) = call(&h.app, "POST", "/admin/refit", Some(json!({"iters": 100}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v, json!({"new_version": 1}));
    let (_, v) = call(&h.app, "GET", "/state/embedding", None).await;
    assert_eq!(v["version"], 1);

    let (s, _) = call(&h.app, "POST", "/admin/refit", Some(json!({"lambda": -1.0}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&h.app, "POST", "/admin/refit", Some(json!({"colour": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = call(&h.app, "GET", "/admin/metrics", None).await;
    assert_eq!(s, StatusCode::OK);
    for field in ["tgr", "knngr", "snr", "agreements", "disagreements", "precision", "recall", "per_class"] {
        assert!(v.get(field).is_some(), "metrics lacks {field}: {v}");
    }
    assert_eq!(v["notes"]["embedding_version"], "1");
    assert_eq!(v["agreements"].as_u64().unwrap() + v["disagreements"].as_u64().unwrap(), 11 * 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_are_all_persisted_in_order() {
    let h = harness(0.0);
    let mut jobs = Vec::new();
    for _ in 0..6 {
        let w = qualified_worker(&h.app).await;
        let (hit_id, sel) = fetch_hit(&h, &w).await;
        jobs.push((w, hit_id, sel));
    }
    let handles: Vec<_> = jobs
        .into_iter()
        .map(|(w, hit_id, sel)| {
            let app = h.app.clone();
            tokio::spawn(async move {
                let body = json!({"worker_id": w, "selections": sel});
                let (s, v) = call(&app, "POST", &format!("/hits/{hit_id}/responses"), Some(body)).await;
                assert_eq!(s, StatusCode::OK);
                serde_json::from_value::<SubmitResult>(v).unwrap()
            })
        })
        .collect();
    let mut results = Vec::new();
    for handle in handles {
        results.push(handle.await.unwrap());
    }
    results.sort_by_key(|r| r.sequence);
    assert_eq!(results.iter().map(|r| r.sequence).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());

    // Log order follows acknowledgment order.
    let log = std::fs::read_to_string(h.data.join(RESPONSES_FILE)).unwrap();
    let logged: Vec<String> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["hit_id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(logged.len(), 72);
    let groups: Vec<&String> = logged.chunks(12).map(|c| &c[0]).collect();
    assert!(logged.chunks(12).all(|c| c.iter().all(|id| id == &c[0])));
    let acked: Vec<&String> = results.iter().map(|r| &r.hit_id).collect();
    assert_eq!(groups, acked);
    assert_eq!(h.state.campaign().lock().await.triplets().len(), 6 * 66);
}

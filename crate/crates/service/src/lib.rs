//! HTTP annotation service for narrative-space campaigns.
//!
//! Workers register, pass a pretest, fetch HITs and submit selections;
//! operators trigger refits and read metrics. State lives in two append-only
//! JSON-lines journals plus embedding snapshot files under the data
//! directory, and is rebuilt from them on start.

pub mod api;
pub mod config;
pub mod journal;
pub mod state;

use std::path::PathBuf;

pub use api::{router, AppState};
pub use config::ServiceConfig;
pub use state::Campaign;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("io error on {}: {}", .0.display(), .1)]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{}:{line}: corrupt log entry: {msg}", path.display())]
    CorruptLog { path: PathBuf, line: usize, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] narrative_core::Error),
    #[error("internal: {0}")]
    Internal(String),
}

/// Opens the campaign and serves it until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<()> {
    let addr = format!("{}:{}", cfg.host, cfg.port);
    let campaign = tokio::task::spawn_blocking(move || Campaign::open(cfg))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| ServiceError::Io(PathBuf::from(&addr), e))?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(AppState::new(campaign)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Io(PathBuf::from(addr), e))
}

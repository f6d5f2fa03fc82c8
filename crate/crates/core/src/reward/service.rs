//! HTTP front end for reward scoring.
//!
//! - `POST /score` `{raw_output, gold_sql, db_id, timeout_ms?}` → `{r_ex, r_format, total}`
//! - `POST /score_batch` `{items: [...]}` → `{scores: [...]}`, order preserved
//! - `GET /health` → `{status: "ok", databases: n}`
//!
//! Failures carry `{error: {code, message}}`. Codes: `unknown_database`
//! (404 on `/score`), `gold_execution_failed` (422), `malformed_request` (400).

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

use super::{total_reward_with, RewardConfig, RewardError};
use crate::executor::DatabaseRegistry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub raw_output: String,
    pub gold_sql: String,
    pub db_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreBatchRequest {
    pub items: Vec<ScoreRequest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub const UNKNOWN_DATABASE: &'static str = "unknown_database";
    pub const GOLD_EXECUTION_FAILED: &'static str = "gold_execution_failed";
    pub const MALFORMED_REQUEST: &'static str = "malformed_request";

    fn new(code: &str, message: impl Into<String>) -> Self {
        ApiError {
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn status(&self) -> StatusCode {
        match self.code.as_str() {
            Self::UNKNOWN_DATABASE => StatusCode::NOT_FOUND,
            Self::GOLD_EXECUTION_FAILED => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ex: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_format: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

impl ScoreResponse {
    fn failed(error: ApiError) -> Self {
        ScoreResponse {
            r_ex: None,
            r_format: None,
            total: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBatchResponse {
    pub scores: Vec<ScoreResponse>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub databases: usize,
}

#[derive(Debug)]
struct AppState {
    registry: DatabaseRegistry,
    cfg: RewardConfig,
    permits: Semaphore,
}

/// Stateless scoring service over a fixed database registry.
#[derive(Debug, Clone)]
pub struct RewardService {
    state: Arc<AppState>,
}

impl RewardService {
    pub fn new(registry: DatabaseRegistry, cfg: RewardConfig, max_parallel: usize) -> Self {
        RewardService {
            state: Arc::new(AppState {
                registry,
                cfg,
                permits: Semaphore::new(max_parallel.max(1)),
            }),
        }
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/score", post(score))
            .route("/score_batch", post(score_batch))
            .route("/health", get(health))
            .with_state(self.state.clone())
    }

    /// Serve until the listener fails.
    pub async fn serve(self, listener: TcpListener) -> std::io::Result<()> {
        axum::serve(listener, self.router()).await
    }

    /// Bind and serve in a background task; returns the bound address.
    pub async fn spawn(self, addr: SocketAddr) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
        let listener = TcpListener::bind(addr).await?;
        let local = listener.local_addr()?;
        Ok((local, tokio::spawn(self.serve(listener))))
    }
}

fn error_response(err: ApiError) -> Response {
    (err.status(), Json(ScoreResponse::failed(err))).into_response()
}

async fn score_one(state: Arc<AppState>, req: ScoreRequest) -> ScoreResponse {
    let db = match state.registry.get(&req.db_id) {
        Ok(db) => db.clone(),
        Err(e) => return ScoreResponse::failed(ApiError::new(ApiError::UNKNOWN_DATABASE, e.to_string())),
    };
    let mut cfg = state.cfg;
    if let Some(ms) = req.timeout_ms {
        cfg.timeout = Duration::from_millis(ms);
    }
    let _permit = state.permits.acquire().await.expect("semaphore closed");
    let result = tokio::task::spawn_blocking(move || total_reward_with(&req.raw_output, &req.gold_sql, &db, &cfg)).await;
    match result {
        Ok(Ok(s)) => ScoreResponse {
            r_ex: Some(s.r_ex),
            r_format: Some(s.r_format),
            total: Some(s.total),
            error: None,
        },
        Ok(Err(RewardError::GoldExecutionFailed(m))) => ScoreResponse::failed(ApiError::new(ApiError::GOLD_EXECUTION_FAILED, m)),
        Err(e) => ScoreResponse::failed(ApiError::new("internal", e.to_string())),
    }
}

#[allow(clippy::result_large_err)]
fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error_response(ApiError::new(ApiError::MALFORMED_REQUEST, e.to_string())))
}

async fn score(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: ScoreRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let out = score_one(state, req).await;
    match out.error.clone() {
        Some(err) => error_response(err),
        None => Json(out).into_response(),
    }
}

async fn score_batch(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: ScoreBatchRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let scores = futures::future::join_all(req.items.into_iter().map(|item| score_one(state.clone(), item))).await;
    Json(ScoreBatchResponse { scores }).into_response()
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        databases: state.registry.len(),
    })
}

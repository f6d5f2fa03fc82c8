//! Scripted chat-completions server for tests and examples.
//!
//! The server runs on its own thread and runtime, so it can be started from
//! both sync and async code. It stops when dropped.
//!
//! ```no_run
//! use sqlconsensus::mock::{MockReply, MockServer};
//! let server = MockServer::start(|_req| MockReply::text("<think>t</think>\n<answer>SELECT 1</answer>")).unwrap();
//! println!("{}", server.base_url());
//! ```

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

/// What the script sees for each request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRequest {
    pub prompt: String,
    pub model: String,
    /// 0-based count of earlier requests carrying the same prompt.
    pub call_index: usize,
    /// 0-based count of all earlier requests.
    pub global_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Text(String),
    /// Bare HTTP status with an error body.
    Status(u16),
    /// 200 with a body that is not a chat completion.
    Malformed,
}

impl MockReply {
    pub fn text(s: impl Into<String>) -> Self {
        MockReply::Text(s.into())
    }
}

type Script = dyn Fn(&MockRequest) -> MockReply + Send + Sync;

#[derive(Debug, Default)]
pub struct MockStats {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    prompts: Mutex<Vec<String>>,
    per_prompt: Mutex<HashMap<String, usize>>,
}

impl MockStats {
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// Prompts in arrival order, one entry per request.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

struct AppState {
    script: Box<Script>,
    stats: Arc<MockStats>,
    latency: Duration,
}

pub struct MockServer {
    addr: SocketAddr,
    stats: Arc<MockStats>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for MockServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockServer").field("addr", &self.addr).finish_non_exhaustive()
    }
}

impl MockServer {
    pub fn start(script: impl Fn(&MockRequest) -> MockReply + Send + Sync + 'static) -> std::io::Result<Self> {
        Self::start_with_latency(script, Duration::ZERO)
    }

    /// Every reply is delayed by `latency`, which makes concurrency observable.
    pub fn start_with_latency(
        script: impl Fn(&MockRequest) -> MockReply + Send + Sync + 'static,
        latency: Duration,
    ) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stats = Arc::new(MockStats::default());
        let state = Arc::new(AppState {
            script: Box::new(script),
            stats: stats.clone(),
            latency,
        });
        let (tx, rx) = oneshot::channel::<()>();
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let app = Router::new()
                    .route("/v1/chat/completions", post(completions))
                    .route("/chat/completions", post(completions))
                    .with_state(state);
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(MockServer {
            addr,
            stats,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL to hand to a [`ModelEndpoint`](crate::sampler::ModelEndpoint).
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn stats(&self) -> &MockStats {
        &self.stats
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

struct InFlight<'a>(&'a MockStats);

impl<'a> InFlight<'a> {
    fn enter(stats: &'a MockStats) -> Self {
        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(stats)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn completions(State(state): State<Arc<AppState>>, Json(body): Json<Value>) -> Response {
    let stats = &state.stats;
    let _guard = InFlight::enter(stats);
    let prompt = body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_string();
    let req = {
        let mut per = stats.per_prompt.lock().unwrap();
        let mut prompts = stats.prompts.lock().unwrap();
        let slot = per.entry(prompt.clone()).or_default();
        let req = MockRequest {
            prompt: prompt.clone(),
            model: body["model"].as_str().unwrap_or_default().to_string(),
            call_index: *slot,
            global_index: stats.requests.fetch_add(1, Ordering::SeqCst),
        };
        *slot += 1;
        prompts.push(prompt);
        req
    };
    if !state.latency.is_zero() {
        tokio::time::sleep(state.latency).await;
    }
    match (state.script)(&req) {
        MockReply::Text(text) => Json(json!({
            "id": format!("mock-{}", req.global_index),
            "object": "chat.completion",
            "model": req.model,
            "choices": [{
                "index": 0,
                "message": {"role": "assistant", "content": text},
                "finish_reason": "stop",
            }],
        }))
        .into_response(),
        MockReply::Status(code) => {
            let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, Json(json!({"error": {"message": "scripted failure"}}))).into_response()
        }
        MockReply::Malformed => (StatusCode::OK, "not json").into_response(),
    }
}

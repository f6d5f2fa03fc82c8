//! Parallel completion sampling from an OpenAI-compatible endpoint, and
//! parsing of completions into think/answer candidates.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures::{StreamExt, TryStreamExt};
use reqwest::{StatusCode, Url};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::sqltext::{locate_final_sql, starts_with_select, strip_fences};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

/// One completion split into reasoning and SQL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedCandidate {
    pub raw: String,
    pub think: Option<String>,
    pub answer_sql: Option<String>,
    /// Exactly `<think>…</think>` then `<answer>SELECT …</answer>`, with only
    /// whitespace outside the tags.
    pub format_ok: bool,
}

fn find_block(text: &str, open: &str, close: &str, from: usize) -> Option<(usize, usize, usize, usize)> {
    let o = from + text[from..].find(open)?;
    let body = o + open.len();
    let c = body + text[body..].find(close)?;
    Some((o, body, c, c + close.len()))
}

/// Parse a raw completion.
///
/// Takes the first think block and the first answer block after it. Without a
/// well-formed tag pair the last SQL statement in the text is extracted
/// instead and the candidate is marked malformed. Never fails.
pub fn parse_model_output(raw: &str) -> ParsedCandidate {
    let think = find_block(raw, THINK_OPEN, THINK_CLOSE, 0);
    let answer_from = think.map(|t| t.3).unwrap_or(0);
    let answer = find_block(raw, ANSWER_OPEN, ANSWER_CLOSE, answer_from);

    let think_text = think.map(|(_, b, c, _)| raw[b..c].trim().to_string());
    match (think, answer) {
        (Some(t), Some(a)) => {
            let sql = strip_fences(&raw[a.1..a.2]);
            let only_ws = |s: &str| s.trim().is_empty();
            let format_ok = starts_with_select(&sql) && only_ws(&raw[..t.0]) && only_ws(&raw[t.3..a.0]) && only_ws(&raw[a.3..]);
            ParsedCandidate {
                raw: raw.to_string(),
                think: think_text,
                answer_sql: Some(sql).filter(|s| !s.is_empty()),
                format_ok,
            }
        }
        (_, Some(a)) => ParsedCandidate {
            raw: raw.to_string(),
            think: think_text,
            answer_sql: Some(strip_fences(&raw[a.1..a.2])).filter(|s| !s.is_empty()),
            format_ok: false,
        },
        (_, None) => {
            let sql = locate_final_sql(raw).map(|l| strip_fences(&l.sql)).filter(|s| !s.is_empty());
            ParsedCandidate {
                raw: raw.to_string(),
                think: think_text,
                answer_sql: sql,
                format_ok: false,
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("endpoint unavailable (slot {slot}, {attempts} attempts): {last_error}")]
    EndpointUnavailable { slot: usize, attempts: usize, last_error: String },
    #[error("endpoint rejected credentials (HTTP {status})")]
    AuthRejected { status: u16 },
    #[error("endpoint rejected request (HTTP {status}): {body}")]
    RequestRejected { status: u16, body: String },
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelEndpoint {
    pub base_url: Url,
    pub model_name: String,
    pub auth_token: Option<String>,
}

impl ModelEndpoint {
    pub fn new(base_url: &str, model_name: impl Into<String>, auth_token: Option<String>) -> Result<Self, SamplerError> {
        let base_url = Url::parse(base_url).map_err(|e| SamplerError::InvalidConfig(format!("endpoint url '{base_url}': {e}")))?;
        if !matches!(base_url.scheme(), "http" | "https") {
            return Err(SamplerError::InvalidConfig(format!("endpoint url '{base_url}' must be http(s)")));
        }
        Ok(ModelEndpoint {
            base_url,
            model_name: model_name.into(),
            auth_token,
        })
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.as_str().trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub n_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: usize,
    pub concurrency_cap: usize,
    /// Retries per slot after the first attempt.
    pub retry_limit: usize,
    pub request_timeout: Duration,
    pub retry_backoff: Duration,
}

impl SamplingConfig {
    /// SQL generation stage: 64 samples.
    pub fn generation() -> Self {
        SamplingConfig {
            n_samples: 64,
            temperature: 0.8,
            top_p: 0.95,
            max_output_tokens: 2048,
            concurrency_cap: 16,
            retry_limit: 3,
            request_timeout: Duration::from_secs(120),
            retry_backoff: Duration::from_millis(200),
        }
    }

    /// Merge revision stage: 8 samples.
    pub fn merge() -> Self {
        SamplingConfig {
            n_samples: 8,
            ..Self::generation()
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.n_samples == 0 {
            return Err(SamplerError::InvalidConfig("n_samples must be >= 1".into()));
        }
        if self.concurrency_cap == 0 {
            return Err(SamplerError::InvalidConfig("concurrency_cap must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(SamplerError::InvalidConfig("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(SamplerError::InvalidConfig("top_p must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

enum Attempt {
    Retry(String),
    Fatal(SamplerError),
}

/// A chat-completions client bound to one endpoint and sampling config.
#[derive(Debug, Clone)]
pub struct Sampler {
    client: reqwest::Client,
    endpoint: ModelEndpoint,
    cfg: SamplingConfig,
    requests: Arc<AtomicU64>,
}

impl Sampler {
    pub fn new(endpoint: ModelEndpoint, cfg: SamplingConfig) -> Result<Self, SamplerError> {
        cfg.validate()?;
        let client = reqwest::Client::builder()
            .timeout(cfg.request_timeout)
            .build()
            .map_err(|e| SamplerError::InvalidConfig(e.to_string()))?;
        Ok(Sampler {
            client,
            endpoint,
            cfg,
            requests: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn config(&self) -> &SamplingConfig {
        &self.cfg
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    /// Draw `n_samples` completions for `prompt`. Result `i` belongs to
    /// request slot `i` regardless of arrival order.
    pub async fn sample(&self, prompt: &str) -> Result<Vec<String>, SamplerError> {
        let mut out: Vec<(usize, String)> = futures::stream::iter(0..self.cfg.n_samples)
            .map(|slot| self.sample_slot(prompt, slot))
            .buffer_unordered(self.cfg.concurrency_cap)
            .try_collect()
            .await?;
        out.sort_by_key(|(slot, _)| *slot);
        Ok(out.into_iter().map(|(_, text)| text).collect())
    }

    async fn sample_slot(&self, prompt: &str, slot: usize) -> Result<(usize, String), SamplerError> {
        let attempts = self.cfg.retry_limit + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = self.cfg.retry_backoff * 2u32.saturating_pow(attempt as u32 - 1).min(16);
                tokio::time::sleep(backoff).await;
            }
            match self.request_once(prompt).await {
                Ok(text) => return Ok((slot, text)),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::debug!(slot, attempt, error = %msg, "sampling request failed");
                    last_error = msg;
                }
            }
        }
        Err(SamplerError::EndpointUnavailable {
            slot,
            attempts,
            last_error,
        })
    }

    async fn request_once(&self, prompt: &str) -> Result<String, Attempt> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let body = json!({
            "model": self.endpoint.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "top_p": self.cfg.top_p,
            "max_tokens": self.cfg.max_output_tokens,
        });
        let mut req = self.client.post(self.endpoint.completions_url()).json(&body);
        if let Some(token) = &self.endpoint.auth_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(Attempt::Fatal(SamplerError::AuthRejected { status: status.as_u16() }));
        }
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(Attempt::Fatal(SamplerError::RequestRejected {
                status: status.as_u16(),
                body,
            }));
        }
        let parsed: ChatResponse = resp.json().await.map_err(|e| Attempt::Retry(format!("malformed response: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Attempt::Retry("response has no choices".into()))?;
        Ok(choice.message.content.unwrap_or_default())
    }
}

/// One-shot convenience over [`Sampler`].
pub async fn sample_candidates(endpoint: &ModelEndpoint, prompt: &str, cfg: &SamplingConfig) -> Result<Vec<String>, SamplerError> {
    Sampler::new(endpoint.clone(), cfg.clone())?.sample(prompt).await
}

//! Execution + format reward for RL post-training.
//!
//! `total = r_ex + 0.1 * r_format`, with both components in {0, 1}.

mod service;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::executor::{execute_sql, results_equivalent, DatabaseRef, ExecutionOutcome, DEFAULT_TIMEOUT};
use crate::sampler::parse_model_output;

pub use service::{ApiError, HealthResponse, RewardService, ScoreBatchRequest, ScoreBatchResponse, ScoreRequest, ScoreResponse};

/// Weight of the format component.
pub const FORMAT_WEIGHT: f64 = 0.1;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("gold SQL failed to execute: {0}")]
    GoldExecutionFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardScore {
    pub r_ex: u8,
    pub r_format: u8,
    pub total: f64,
}

impl RewardScore {
    pub fn new(r_ex: u8, r_format: u8) -> Self {
        Self::weighted(r_ex, r_format, FORMAT_WEIGHT)
    }

    pub fn weighted(r_ex: u8, r_format: u8, format_weight: f64) -> Self {
        RewardScore {
            r_ex,
            r_format,
            total: r_ex as f64 + format_weight * r_format as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub timeout: Duration,
    /// Leave at [`FORMAT_WEIGHT`] unless deliberately experimenting.
    pub format_weight: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            timeout: DEFAULT_TIMEOUT,
            format_weight: FORMAT_WEIGHT,
        }
    }
}

/// 1 iff the output is exactly a think block followed by an answer block
/// whose SQL starts with SELECT.
pub fn format_reward(raw_output: &str) -> u8 {
    parse_model_output(raw_output).format_ok as u8
}

fn gold_outcome(gold_sql: &str, db: &DatabaseRef, timeout: Duration) -> Result<ExecutionOutcome, RewardError> {
    let gold = execute_sql(db, gold_sql, timeout);
    if !gold.is_success() {
        let why = match gold.message() {
            Some(m) => format!("{}: {m}", gold.error_kind().map(|k| k.to_string()).unwrap_or_default()),
            None => "timeout".to_string(),
        };
        return Err(RewardError::GoldExecutionFailed(why));
    }
    Ok(gold)
}

/// 1 iff the prediction and the gold query both execute and their results
/// are equivalent. A failing gold query is an error, not a zero.
pub fn execution_reward(pred_sql: &str, gold_sql: &str, db: &DatabaseRef, timeout: Duration) -> Result<u8, RewardError> {
    let gold = gold_outcome(gold_sql, db, timeout)?;
    if pred_sql.trim().is_empty() {
        return Ok(0);
    }
    let pred = execute_sql(db, pred_sql, timeout);
    Ok(results_equivalent(&pred, &gold) as u8)
}

/// Score a raw model output against a gold query.
pub fn total_reward(raw_output: &str, gold_sql: &str, db: &DatabaseRef) -> Result<RewardScore, RewardError> {
    total_reward_with(raw_output, gold_sql, db, &RewardConfig::default())
}

pub fn total_reward_with(raw_output: &str, gold_sql: &str, db: &DatabaseRef, cfg: &RewardConfig) -> Result<RewardScore, RewardError> {
    let parsed = parse_model_output(raw_output);
    let sql = parsed.answer_sql.as_deref().unwrap_or("");
    let r_ex = execution_reward(sql, gold_sql, db, cfg.timeout)?;
    Ok(RewardScore::weighted(r_ex, parsed.format_ok as u8, cfg.format_weight))
}

//! Execution-grounded consensus for small text-to-SQL models.
//!
//! Candidates are sampled from an OpenAI-compatible endpoint, executed
//! read-only against SQLite, and grouped by result fingerprint. A unanimous
//! vote is returned as is; a contested vote hands the two leading drafts and
//! their results to a merge-revision model, whose samples are voted on again.
//!
//! Around that pipeline sit corpus filtering for SFT data, prompt rendering,
//! a reward function (and HTTP service) for RL, and evaluation: execution
//! accuracy, pass@k and consistency@k.

pub mod cli;
pub mod config;
pub mod consensus;
pub mod corpus;
pub mod eval;
pub mod executor;
pub mod jsonl;
pub mod mock;
pub mod prompts;
pub mod reward;
pub mod sampler;
pub mod sqltext;

pub use consensus::{CscPipeline, Prediction, Stage, VoteOutcome};
pub use executor::{execute_sql, DatabaseRef, DatabaseRegistry, ExecutionOutcome, Executor};
pub use reward::{total_reward, RewardScore};
pub use sampler::{ModelEndpoint, Sampler, SamplingConfig};

//! Layered run configuration: defaults < TOML file < environment < flags.
//!
//! Environment variables are named `SQLCONSENSUS_<KEY>` with the key
//! upper-cased, e.g. `SQLCONSENSUS_N_GEN=32`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::executor::{DatabaseRegistry, ExecOptions, RegistryError};
use crate::prompts::TruncationLimits;
use crate::sampler::{ModelEndpoint, SamplingConfig};

pub const ENV_PREFIX: &str = "SQLCONSENSUS_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration for '{key}': {reason}")]
    InvalidConfig { key: String, reason: String },
    #[error("no database manifest configured (set db_manifest or --db-manifest)")]
    MissingDatabaseManifest,
    #[error("no model endpoint configured (set endpoint_url or --endpoint-url)")]
    MissingEndpoint,
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidConfig {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub endpoint_url: Option<String>,
    /// Falls back to `endpoint_url`.
    pub merge_endpoint_url: Option<String>,
    pub model: String,
    /// Falls back to `model`.
    pub merge_model: Option<String>,
    pub api_key: Option<String>,
    pub db_manifest: Option<PathBuf>,
    pub n_gen: usize,
    pub n_merge: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: usize,
    pub concurrency: usize,
    /// Tasks processed at once by `generate`.
    pub task_concurrency: usize,
    pub retry_limit: usize,
    pub request_timeout_ms: u64,
    pub timeout_ms: u64,
    pub truncate_rows: usize,
    pub truncate_chars: usize,
    /// Consistent-vote threshold on the top group's share; unset means unanimity.
    pub dominance_threshold: Option<f64>,
    pub no_merge: bool,
    pub token_limit: usize,
    /// Candidates per task when building merge training data.
    pub merge_candidates: usize,
    pub seed: u64,
    pub curve_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gen = SamplingConfig::generation();
        RunConfig {
            endpoint_url: None,
            merge_endpoint_url: None,
            model: "default".into(),
            merge_model: None,
            api_key: None,
            db_manifest: None,
            n_gen: gen.n_samples,
            n_merge: SamplingConfig::merge().n_samples,
            temperature: gen.temperature,
            top_p: gen.top_p,
            max_output_tokens: gen.max_output_tokens,
            concurrency: gen.concurrency_cap,
            task_concurrency: 4,
            retry_limit: gen.retry_limit,
            request_timeout_ms: gen.request_timeout.as_millis() as u64,
            timeout_ms: crate::executor::DEFAULT_TIMEOUT.as_millis() as u64,
            truncate_rows: TruncationLimits::default().max_rows,
            truncate_chars: TruncationLimits::default().max_chars,
            dominance_threshold: None,
            no_merge: false,
            token_limit: crate::corpus::DEFAULT_TOKEN_LIMIT,
            merge_candidates: 8,
            seed: 0,
            curve_trials: 10_000,
        }
    }
}

fn defaults_table() -> Table {
    match Value::try_from(RunConfig::default()).expect("defaults serialize") {
        Value::Table(t) => t,
        _ => unreachable!("struct serializes to a table"),
    }
}

/// Turn `SQLCONSENSUS_*` variables into a table, typed after the defaults.
fn env_table(env: &HashMap<String, String>) -> Result<Table, ConfigError> {
    let defaults = defaults_table();
    let mut out = Table::new();
    for (name, raw) in env {
        let Some(key) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let key = key.to_ascii_lowercase();
        let value = match defaults.get(&key) {
            Some(Value::Integer(_)) => Value::Integer(
                raw.trim()
                    .parse()
                    .map_err(|_| invalid(&key, format!("expected an integer, got {raw:?}")))?,
            ),
            Some(Value::Float(_)) => Value::Float(
                raw.trim()
                    .parse()
                    .map_err(|_| invalid(&key, format!("expected a number, got {raw:?}")))?,
            ),
            Some(Value::Boolean(_)) => Value::Boolean(match raw.trim().to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" => true,
                "0" | "false" | "no" => false,
                _ => return Err(invalid(&key, format!("expected a boolean, got {raw:?}"))),
            }),
            _ if key == "dominance_threshold" => Value::Float(
                raw.trim()
                    .parse()
                    .map_err(|_| invalid(&key, format!("expected a number, got {raw:?}")))?,
            ),
            _ => Value::String(raw.clone()),
        };
        out.insert(key, value);
    }
    Ok(out)
}

fn file_table(path: &Path) -> Result<Table, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut table: Table = toml::from_str(&text).map_err(|e| invalid(&path.display().to_string(), e.to_string()))?;
    // relative manifest paths are relative to the config file
    if let (Some(Value::String(p)), Some(dir)) = (table.get("db_manifest"), path.parent()) {
        if Path::new(p).is_relative() {
            let joined = dir.join(p).to_string_lossy().into_owned();
            table.insert("db_manifest".into(), Value::String(joined));
        }
    }
    Ok(table)
}

/// Merge the layers and validate. `flags` holds only values given explicitly
/// on the command line.
pub fn resolve_config(file: Option<&Path>, env: &HashMap<String, String>, flags: Table) -> Result<RunConfig, ConfigError> {
    let mut merged = defaults_table();
    if let Some(path) = file {
        merged.extend(file_table(path)?);
    }
    merged.extend(env_table(env)?);
    merged.extend(flags);
    let cfg: RunConfig = Value::Table(merged).try_into().map_err(|e: toml::de::Error| {
        let msg = e.to_string();
        let key = msg.split('`').nth(1).unwrap_or("config").to_string();
        invalid(&key, msg.trim())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("n_gen", self.n_gen),
            ("n_merge", self.n_merge),
            ("concurrency", self.concurrency),
            ("task_concurrency", self.task_concurrency),
            ("truncate_rows", self.truncate_rows),
            ("truncate_chars", self.truncate_chars),
            ("merge_candidates", self.merge_candidates),
            ("token_limit", self.token_limit),
            ("timeout_ms", self.timeout_ms as usize),
            ("request_timeout_ms", self.request_timeout_ms as usize),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(invalid(key, "must be positive"));
            }
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(invalid("temperature", "must be a finite number >= 0"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(invalid("top_p", "must be in (0, 1]"));
        }
        if let Some(t) = self.dominance_threshold {
            if !(t > 0.5 && t <= 1.0) {
                return Err(invalid("dominance_threshold", "must be in (0.5, 1]"));
            }
        }
        Ok(())
    }

    fn sampling(&self, base: SamplingConfig, n: usize) -> SamplingConfig {
        SamplingConfig {
            n_samples: n,
            temperature: self.temperature,
            top_p: self.top_p,
            max_output_tokens: self.max_output_tokens,
            concurrency_cap: self.concurrency,
            retry_limit: self.retry_limit,
            request_timeout: Duration::from_millis(self.request_timeout_ms),
            ..base
        }
    }

    pub fn generation_sampling(&self) -> SamplingConfig {
        self.sampling(SamplingConfig::generation(), self.n_gen)
    }

    pub fn merge_sampling(&self) -> SamplingConfig {
        self.sampling(SamplingConfig::merge(), self.n_merge)
    }

    pub fn exec_timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn exec_options(&self) -> ExecOptions {
        ExecOptions::with_timeout(self.exec_timeout())
    }

    pub fn truncation_limits(&self) -> TruncationLimits {
        TruncationLimits {
            max_rows: self.truncate_rows,
            max_chars: self.truncate_chars,
        }
    }

    pub fn generation_endpoint(&self) -> Result<ModelEndpoint, ConfigError> {
        let url = self.endpoint_url.as_deref().ok_or(ConfigError::MissingEndpoint)?;
        ModelEndpoint::new(url, self.model.clone(), self.api_key.clone()).map_err(|e| invalid("endpoint_url", e.to_string()))
    }

    pub fn merge_endpoint(&self) -> Result<ModelEndpoint, ConfigError> {
        let url = self
            .merge_endpoint_url
            .as_deref()
            .or(self.endpoint_url.as_deref())
            .ok_or(ConfigError::MissingEndpoint)?;
        let model = self.merge_model.clone().unwrap_or_else(|| self.model.clone());
        ModelEndpoint::new(url, model, self.api_key.clone()).map_err(|e| invalid("merge_endpoint_url", e.to_string()))
    }

    pub fn registry(&self) -> Result<DatabaseRegistry, ConfigError> {
        let path = self.db_manifest.as_deref().ok_or(ConfigError::MissingDatabaseManifest)?;
        Ok(DatabaseRegistry::from_manifest(path)?)
    }
}

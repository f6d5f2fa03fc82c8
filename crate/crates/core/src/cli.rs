//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 runtime failure.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::config::{resolve_config, ConfigError, RunConfig};
use crate::consensus::{CscPipeline, CscSettings, Prediction};
use crate::corpus::{
    build_merge_training_sample, filter_training_sample, normalize_cot, CorpusEntry, FilterVerdict, RawTrainingSample, Rejection,
    TaskRecord,
};
use crate::eval::{curve, default_ks, execution_accuracy, EvalOptions, TaskSamples};
use crate::executor::{execute_sql_with, load_schema_ddl, DatabaseRegistry, Digest, Executor};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::reward::{RewardConfig, RewardService};
use crate::sampler::{parse_model_output, ParsedCandidate, Sampler};

#[derive(Debug, Parser)]
#[command(
    name = "sqlconsensus",
    version,
    about = "Execution-grounded voting and merge revision for text-to-SQL"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every subcommand; each overrides the config file and
/// `SQLCONSENSUS_*` environment variables.
#[derive(Debug, Default, Args)]
pub struct CommonArgs {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Chat-completions base URL for generation (e.g. http://host:8000/v1).
    #[arg(long, global = true)]
    pub endpoint_url: Option<String>,
    /// Base URL for the merge-revision model; defaults to the generation endpoint.
    #[arg(long, global = true)]
    pub merge_endpoint_url: Option<String>,
    /// Model name sent to the generation endpoint.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Model name sent to the merge endpoint.
    #[arg(long, global = true)]
    pub merge_model: Option<String>,
    /// Samples per task in the first stage.
    #[arg(long, global = true)]
    pub n_gen: Option<usize>,
    /// Samples per contested task in the merge stage.
    #[arg(long, global = true)]
    pub n_merge: Option<usize>,
    /// Sampling temperature.
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Per-query execution timeout.
    #[arg(long, global = true)]
    pub timeout_ms: Option<u64>,
    /// Database manifest: JSON object or `db_id path` lines.
    #[arg(long, global = true)]
    pub db_manifest: Option<PathBuf>,
    /// Concurrent requests per sampling call.
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    /// Seed for Monte-Carlo estimates.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter and normalize a chain-of-thought corpus into SFT samples.
    BuildDataset {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        token_limit: Option<usize>,
    },
    /// Sample candidates per task and keep contested ones with a correct draft.
    BuildMergeDataset {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Candidates drawn per task.
        #[arg(long)]
        candidates: Option<usize>,
    },
    /// Predict SQL for every task with voting and merge revision.
    Generate {
        #[arg(long)]
        input: PathBuf,
        /// Predictions JSONL.
        #[arg(long)]
        out: PathBuf,
        /// Resolve contested votes by plurality instead of merge revision.
        #[arg(long)]
        no_merge: bool,
        /// Also write first-stage candidate SQL per task (input to `curves`).
        #[arg(long)]
        samples_out: Option<PathBuf>,
    },
    /// Execution accuracy of predictions against gold SQL.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Directory for report.json, report.txt and timing.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        exclude_gold_failures: bool,
    },
    /// pass@k and consistency@k curves from stored candidate samples.
    Curves {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated k values; powers of two up to n by default.
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// HTTP reward service for RL trainers.
    ServeReward {
        #[arg(long, default_value = "127.0.0.1:8000")]
        listen: SocketAddr,
        /// Executions running at once.
        #[arg(long, default_value_t = 8)]
        max_parallel: usize,
        #[arg(long, hide = true)]
        format_weight: Option<f64>,
    },
}

/// First-stage candidates of one task, as written by `generate --samples-out`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub task_id: String,
    pub sqls: Vec<Option<String>>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Registry(e) => Failure::Runtime(e.to_string()),
            e => Failure::Usage(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

impl CommonArgs {
    fn flag_table(&self) -> Table {
        let mut t = Table::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                t.insert(k.to_string(), v);
            }
        };
        put("endpoint_url", self.endpoint_url.clone().map(Value::String));
        put("merge_endpoint_url", self.merge_endpoint_url.clone().map(Value::String));
        put("model", self.model.clone().map(Value::String));
        put("merge_model", self.merge_model.clone().map(Value::String));
        put("n_gen", self.n_gen.map(|v| Value::Integer(v as i64)));
        put("n_merge", self.n_merge.map(|v| Value::Integer(v as i64)));
        put("temperature", self.temperature.map(Value::Float));
        put("timeout_ms", self.timeout_ms.map(|v| Value::Integer(v as i64)));
        put(
            "db_manifest",
            self.db_manifest.as_ref().map(|p| Value::String(p.to_string_lossy().into_owned())),
        );
        put("concurrency", self.concurrency.map(|v| Value::Integer(v as i64)));
        put("seed", self.seed.map(|v| Value::Integer(v as i64)));
        t
    }
}

/// Parse `args` (program name first) and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let env: HashMap<String, String> = std::env::vars().collect();
    match execute(cli, &env) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}

fn execute(cli: Cli, env: &HashMap<String, String>) -> Result<(), Failure> {
    let mut flags = cli.common.flag_table();
    match &cli.command {
        Command::BuildDataset { token_limit: Some(n), .. } => {
            flags.insert("token_limit".into(), Value::Integer(*n as i64));
        }
        Command::BuildMergeDataset { candidates: Some(n), .. } => {
            flags.insert("merge_candidates".into(), Value::Integer(*n as i64));
        }
        Command::Generate { no_merge: true, .. } => {
            flags.insert("no_merge".into(), Value::Boolean(true));
        }
        Command::Curves { trials: Some(n), .. } => {
            flags.insert("curve_trials".into(), Value::Integer(*n as i64));
        }
        _ => {}
    }
    let cfg = resolve_config(cli.common.config.as_deref(), env, flags)?;

    match cli.command {
        Command::BuildDataset { input, out, .. } => build_dataset(&cfg, &input, &out),
        Command::BuildMergeDataset { input, out, .. } => block_on(build_merge_dataset(&cfg, &input, &out)),
        Command::Generate {
            input, out, samples_out, ..
        } => block_on(generate(&cfg, &input, &out, samples_out.as_deref())),
        Command::Evaluate {
            predictions,
            input,
            out,
            exclude_gold_failures,
        } => evaluate(&cfg, &predictions, &input, &out, exclude_gold_failures),
        Command::Curves {
            samples, input, out, ks, ..
        } => curves(&cfg, &samples, &input, &out, &ks),
        Command::ServeReward {
            listen,
            max_parallel,
            format_weight,
        } => block_on(serve_reward(&cfg, listen, max_parallel, format_weight)),
    }
}

fn block_on<F: std::future::Future<Output = Result<(), Failure>>>(fut: F) -> Result<(), Failure> {
    tokio::runtime::Runtime::new().map_err(runtime)?.block_on(fut)
}

fn read_tasks(path: &Path) -> Result<Vec<TaskRecord>, Failure> {
    read_jsonl(path).map_err(runtime)
}

/// Fill empty `schema_ddl` fields from the task databases.
fn fill_schemas(tasks: &mut [TaskRecord], registry: &DatabaseRegistry) -> Result<(), Failure> {
    let mut cache: HashMap<String, String> = HashMap::new();
    for t in tasks.iter_mut().filter(|t| t.schema_ddl.trim().is_empty()) {
        if !cache.contains_key(&t.db_id) {
            let db = registry.get(&t.db_id).map_err(runtime)?;
            let ddl = load_schema_ddl(db).map_err(|e| runtime(format!("schema of {}: {e}", t.db_id)))?;
            cache.insert(t.db_id.clone(), ddl);
        }
        t.schema_ddl = cache[&t.db_id].clone();
    }
    Ok(())
}

fn build_dataset(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), Failure> {
    let mut entries: Vec<CorpusEntry> = read_jsonl(input).map_err(runtime)?;
    if cfg.db_manifest.is_some() {
        let registry = cfg.registry()?;
        let mut tasks: Vec<TaskRecord> = entries.iter().map(|e| e.task.clone()).collect();
        fill_schemas(&mut tasks, &registry)?;
        for (e, t) in entries.iter_mut().zip(tasks) {
            e.task = t;
        }
    }
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
    for e in entries {
        let sample = RawTrainingSample {
            task: e.task,
            cot: e.cot.unwrap_or_default(),
        };
        match filter_training_sample(&sample, cfg.token_limit) {
            FilterVerdict::Accept => kept.push(normalize_cot(&sample).map_err(runtime)?),
            FilterVerdict::Reject(rule) => {
                *counts.entry(rule.as_str()).or_default() += 1;
                rejected.push(Rejection {
                    task_id: sample.task.task_id,
                    rule,
                });
            }
        }
    }
    write_jsonl(&out.join("sft.jsonl"), &kept).map_err(runtime)?;
    write_jsonl(&out.join("rejections.jsonl"), &rejected).map_err(runtime)?;
    println!("kept {} of {} samples", kept.len(), kept.len() + rejected.len());
    for (rule, n) in counts {
        println!("  rejected {rule}: {n}");
    }
    Ok(())
}

async fn build_merge_dataset(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), Failure> {
    let registry = cfg.registry()?;
    let mut tasks = read_tasks(input)?;
    fill_schemas(&mut tasks, &registry)?;
    let sampling = crate::sampler::SamplingConfig {
        n_samples: cfg.merge_candidates,
        ..cfg.generation_sampling()
    };
    let sampler = Sampler::new(cfg.generation_endpoint()?, sampling).map_err(|e| Failure::Usage(e.to_string()))?;
    let executor = Executor::new(cfg.exec_options(), cfg.concurrency);
    let settings = CscSettings::default();
    let limits = cfg.truncation_limits();

    let mut samples = Vec::new();
    for task in &tasks {
        let db = registry.get(&task.db_id).map_err(runtime)?;
        let prompt = settings.prompts.render_generation(&task.prompt_input());
        let raw = sampler.sample(&prompt).await.map_err(runtime)?;
        let cands: Vec<ParsedCandidate> = raw.iter().map(|r| parse_model_output(r)).collect();
        let sqls: Vec<Option<String>> = cands.iter().map(|c| c.answer_sql.clone()).collect();
        let outcomes = executor.execute_batch(db, &sqls).await;
        let gold = execute_sql_with(db, &task.gold_sql, &cfg.exec_options());
        if !gold.is_success() {
            tracing::warn!(task = %task.task_id, "gold SQL failed; skipped");
            continue;
        }
        if let Some(s) = build_merge_training_sample(task, &cands, &outcomes, &gold, &limits).map_err(runtime)? {
            samples.push(s);
        }
    }
    write_jsonl(&out.join("merge_sft.jsonl"), &samples).map_err(runtime)?;
    println!("built {} merge samples from {} tasks", samples.len(), tasks.len());
    Ok(())
}

async fn generate(cfg: &RunConfig, input: &Path, out: &Path, samples_out: Option<&Path>) -> Result<(), Failure> {
    let registry = cfg.registry()?;
    let mut tasks = read_tasks(input)?;
    fill_schemas(&mut tasks, &registry)?;
    let bad = |e: crate::sampler::SamplerError| Failure::Usage(e.to_string());
    let generator = Sampler::new(cfg.generation_endpoint()?, cfg.generation_sampling()).map_err(bad)?;
    let merger = if cfg.no_merge {
        None
    } else {
        Some(Sampler::new(cfg.merge_endpoint()?, cfg.merge_sampling()).map_err(bad)?)
    };
    let settings = CscSettings {
        limits: cfg.truncation_limits(),
        dominance_threshold: cfg.dominance_threshold,
        ..CscSettings::default()
    };
    let executor = Executor::new(cfg.exec_options(), cfg.concurrency);
    let pipeline = Arc::new(CscPipeline::new(generator, merger, executor, settings));

    let mut jobs = Vec::with_capacity(tasks.len());
    for t in tasks {
        let db = registry.get(&t.db_id).map_err(runtime)?.clone();
        jobs.push((t, db));
    }
    // `buffered` keeps input order
    let traces: Vec<_> = futures::stream::iter(jobs)
        .map(|(task, db)| {
            let p = pipeline.clone();
            async move { p.run_traced(&task, &db).await }
        })
        .buffered(cfg.task_concurrency)
        .collect()
        .await;
    let mut predictions: Vec<Prediction> = Vec::with_capacity(traces.len());
    let mut samples = Vec::with_capacity(traces.len());
    for t in traces {
        let t = t.map_err(runtime)?;
        samples.push(SampleRecord {
            task_id: t.prediction.task_id.clone(),
            sqls: t.candidates.iter().map(|c| c.answer_sql.clone()).collect(),
        });
        predictions.push(t.prediction);
    }
    write_jsonl(out, &predictions).map_err(runtime)?;
    if let Some(path) = samples_out {
        write_jsonl(path, &samples).map_err(runtime)?;
    }
    let m = &pipeline.metrics;
    eprintln!(
        "wrote {} predictions; merge prompts issued: {}",
        predictions.len(),
        m.merge_prompts.load(std::sync::atomic::Ordering::Relaxed)
    );
    Ok(())
}

fn task_map(tasks: Vec<TaskRecord>) -> HashMap<String, TaskRecord> {
    tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect()
}

fn evaluate(cfg: &RunConfig, predictions: &Path, input: &Path, out: &Path, exclude_gold_failures: bool) -> Result<(), Failure> {
    let registry = cfg.registry()?;
    let preds: Vec<Prediction> = read_jsonl(predictions).map_err(runtime)?;
    let tasks = task_map(read_tasks(input)?);
    let opts = EvalOptions {
        timeout: cfg.exec_timeout(),
        exclude_gold_failures,
    };
    let report = execution_accuracy(&preds, &tasks, &registry, &opts).map_err(runtime)?;
    report.write_to(out).map_err(runtime)?;
    print!("{}", report.render_table());
    Ok(())
}

fn curves(cfg: &RunConfig, samples: &Path, input: &Path, out: &Path, ks: &[usize]) -> Result<(), Failure> {
    let registry = cfg.registry()?;
    let records: Vec<SampleRecord> = read_jsonl(samples).map_err(runtime)?;
    let tasks = task_map(read_tasks(input)?);
    let opts = cfg.exec_options();
    let mut pools: Vec<TaskSamples<Digest>> = Vec::with_capacity(records.len());
    for r in &records {
        let task = tasks
            .get(&r.task_id)
            .ok_or_else(|| runtime(format!("samples for unknown task {:?}", r.task_id)))?;
        let db = registry.get(&task.db_id).map_err(runtime)?;
        let digest = |sql: &str| execute_sql_with(db, sql, &opts).digest();
        pools.push(TaskSamples {
            gold: digest(&task.gold_sql),
            samples: r.sqls.iter().map(|s| s.as_deref().and_then(digest)).collect(),
        });
    }
    let n = pools.iter().map(|p| p.samples.len()).min().unwrap_or(0);
    let ks = if ks.is_empty() { default_ks(n) } else { ks.to_vec() };
    let points = curve(&pools, &ks, cfg.curve_trials, cfg.seed).map_err(runtime)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(runtime)?;
    }
    std::fs::write(out, serde_json::to_string_pretty(&points).expect("curve serializes") + "\n").map_err(runtime)?;
    println!("{:>6} {:>10} {:>14}", "k", "pass@k", "consistency@k");
    for p in &points {
        println!("{:>6} {:>10.4} {:>14.4}", p.k, p.pass_at_k, p.consistency_at_k);
    }
    Ok(())
}

async fn serve_reward(cfg: &RunConfig, listen: SocketAddr, max_parallel: usize, format_weight: Option<f64>) -> Result<(), Failure> {
    let registry = cfg.registry()?;
    let mut rcfg = RewardConfig {
        timeout: cfg.exec_timeout(),
        ..RewardConfig::default()
    };
    if let Some(w) = format_weight {
        rcfg.format_weight = w;
    }
    let listener = tokio::net::TcpListener::bind(listen).await.map_err(runtime)?;
    println!("reward service listening on {}", listener.local_addr().map_err(runtime)?);
    RewardService::new(registry, rcfg, max_parallel)
        .serve(listener)
        .await
        .map_err(runtime)
}

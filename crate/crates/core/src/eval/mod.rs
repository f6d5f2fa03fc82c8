//! Execution accuracy over predictions, and test-time-compute curves.

pub mod curves;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{Prediction, Stage};
use crate::corpus::{Difficulty, TaskRecord};
use crate::executor::{DatabaseRegistry, RegistryError};
use crate::reward::{execution_reward, RewardError};

pub use curves::{consistency_at_k, curve, default_ks, pass_at_k, pass_at_k_single, CurvePoint, TaskSamples};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction for unknown task {0:?}")]
    UnknownTask(String),
    #[error("k = {k} exceeds the {n} available samples")]
    KExceedsN { k: usize, n: usize },
    #[error("no tasks to evaluate")]
    EmptyInput,
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub timeout: Duration,
    /// Drop tasks whose gold SQL fails instead of counting them as wrong.
    pub exclude_gold_failures: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            timeout: crate::executor::DEFAULT_TIMEOUT,
            exclude_gold_failures: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DifficultyStats {
    pub n: usize,
    pub correct: usize,
    pub ex: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub difficulty: Difficulty,
    pub stage: Stage,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub gold_failed: bool,
}

/// Timing totals; kept out of the report so reports are reproducible.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub eval_wall_time_ms: u64,
    pub prediction_wall_time_ms: u64,
    pub gen_time_ms: u64,
    pub merge_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_tasks: usize,
    pub n_correct: usize,
    pub ex_overall: f64,
    pub by_difficulty: BTreeMap<Difficulty, DifficultyStats>,
    pub stage_histogram: BTreeMap<Stage, usize>,
    pub gold_failures: Vec<String>,
    pub tasks: Vec<TaskResult>,
    #[serde(skip)]
    pub timing: Timing,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Execute every prediction and its gold query; a task is correct iff the
/// execution reward is 1.
pub fn execution_accuracy(
    predictions: &[Prediction],
    tasks: &HashMap<String, TaskRecord>,
    registry: &DatabaseRegistry,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let started = Instant::now();
    let mut jobs = Vec::with_capacity(predictions.len());
    for p in predictions {
        let task = tasks.get(&p.task_id).ok_or_else(|| EvalError::UnknownTask(p.task_id.clone()))?;
        jobs.push((p, task, registry.get(&task.db_id)?));
    }

    let mut results: Vec<TaskResult> = jobs
        .par_iter()
        .map(|(p, task, db)| {
            let (correct, gold_failed) = match execution_reward(&p.final_sql, &task.gold_sql, db, opts.timeout) {
                Ok(r) => (r == 1, false),
                Err(RewardError::GoldExecutionFailed(_)) => (false, true),
            };
            TaskResult {
                task_id: p.task_id.clone(),
                difficulty: task.difficulty,
                stage: p.stage,
                correct,
                gold_failed,
            }
        })
        .collect();

    let gold_failures: Vec<String> = results.iter().filter(|r| r.gold_failed).map(|r| r.task_id.clone()).collect();
    if opts.exclude_gold_failures {
        results.retain(|r| !r.gold_failed);
    }

    let mut by_difficulty: BTreeMap<Difficulty, DifficultyStats> = BTreeMap::new();
    let mut stage_histogram: BTreeMap<Stage, usize> = Stage::ALL.iter().map(|s| (*s, 0)).collect();
    for r in &results {
        let d = by_difficulty.entry(r.difficulty).or_default();
        d.n += 1;
        d.correct += r.correct as usize;
        *stage_histogram.entry(r.stage).or_default() += 1;
    }
    for d in by_difficulty.values_mut() {
        d.ex = ratio(d.correct, d.n);
    }
    let n_correct = results.iter().filter(|r| r.correct).count();

    let timing = Timing {
        eval_wall_time_ms: started.elapsed().as_millis() as u64,
        prediction_wall_time_ms: predictions.iter().map(|p| p.wall_time_ms).sum(),
        gen_time_ms: predictions.iter().map(|p| p.gen_time_ms).sum(),
        merge_time_ms: predictions.iter().map(|p| p.merge_time_ms).sum(),
    };
    Ok(EvalReport {
        n_tasks: results.len(),
        n_correct,
        ex_overall: ratio(n_correct, results.len()),
        by_difficulty,
        stage_histogram,
        gold_failures,
        tasks: results,
        timing,
    })
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

impl EvalReport {
    /// Fixed-width table: one column per difficulty level plus an overall
    /// column. `Unknown` appears only when some task lacks a label.
    pub fn render_table(&self) -> String {
        let mut levels = vec![Difficulty::Simple, Difficulty::Moderate, Difficulty::Challenge];
        if self.by_difficulty.contains_key(&Difficulty::Unknown) {
            levels.push(Difficulty::Unknown);
        }
        let mut header = format!("{:<10}", "");
        let mut count = format!("{:<10}", "count");
        let mut ex = format!("{:<10}", "EX (%)");
        for d in &levels {
            let s = self.by_difficulty.get(d).copied().unwrap_or_default();
            let name = d.as_str();
            let title = format!("{}{}", name[..1].to_uppercase(), &name[1..]);
            let _ = write!(header, "{title:>11}");
            let _ = write!(count, "{:>11}", s.n);
            let _ = write!(ex, "{:>11}", if s.n == 0 { "-".to_string() } else { pct(s.ex) });
        }
        let _ = write!(header, "{:>11}", "All");
        let _ = write!(count, "{:>11}", self.n_tasks);
        let _ = write!(ex, "{:>11}", pct(self.ex_overall));

        let mut out = format!("{header}\n{count}\n{ex}\n\n{:<10}{:>11}\n", "stage", "tasks");
        for (stage, n) in &self.stage_histogram {
            let _ = writeln!(out, "{:<10}{n:>11}", stage.as_str());
        }
        if !self.gold_failures.is_empty() {
            let _ = writeln!(
                out,
                "\ngold failures ({}): {}",
                self.gold_failures.len(),
                self.gold_failures.join(", ")
            );
        }
        out
    }

    /// Write `report.json`, `report.txt` and `timing.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), EvalError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| EvalError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let json = serde_json::to_string_pretty(self).expect("report serializes") + "\n";
        let p = dir.join("report.json");
        std::fs::write(&p, json).map_err(io(&p))?;
        let p = dir.join("report.txt");
        std::fs::write(&p, self.render_table()).map_err(io(&p))?;
        let p = dir.join("timing.json");
        let timing = serde_json::to_string_pretty(&self.timing).expect("timing serializes") + "\n";
        std::fs::write(&p, timing).map_err(io(&p))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rusqlite::Connection;

    fn fixture() -> (tempfile::TempDir, DatabaseRegistry, HashMap<String, TaskRecord>) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.sqlite");
        Connection::open(&path)
            .unwrap()
            .execute_batch("CREATE TABLE t (a INT); INSERT INTO t VALUES (1),(2),(3);")
            .unwrap();
        let mut reg = DatabaseRegistry::new();
        reg.register("e", &path).unwrap();
        let mk = |id: &str, gold: &str, d: Difficulty| TaskRecord {
            task_id: id.into(),
            db_id: "e".into(),
            question: "q".into(),
            evidence: None,
            schema_ddl: String::new(),
            gold_sql: gold.into(),
            difficulty: d,
        };
        let tasks = [
            mk("1", "SELECT a FROM t", Difficulty::Simple),
            mk("2", "SELECT max(a) FROM t", Difficulty::Simple),
            mk("3", "SELECT count(*) FROM t", Difficulty::Challenge),
            mk("4", "SELECT * FROM nope", Difficulty::Moderate),
        ];
        (dir, reg, tasks.into_iter().map(|t| (t.task_id.clone(), t)).collect())
    }

    fn pred(id: &str, sql: &str, stage: Stage) -> Prediction {
        Prediction {
            task_id: id.into(),
            final_sql: sql.into(),
            stage,
            n_gen: 4,
            n_merge: 0,
            vote_histogram: vec![4],
            wall_time_ms: 10,
            gen_time_ms: 7,
            merge_time_ms: 0,
            provenance: vec![],
            merge_choice: None,
        }
    }

    #[test]
    fn accuracy_by_difficulty_and_stage() {
        let (_d, reg, tasks) = fixture();
        let preds = vec![
            pred("1", "SELECT a FROM t ORDER BY a DESC", Stage::Sc),
            pred("2", "SELECT min(a) FROM t", Stage::CscMerge),
            pred("3", "SELECT 3", Stage::Fallback),
            pred("4", "SELECT 1", Stage::Sc),
        ];
        let r = execution_accuracy(&preds, &tasks, &reg, &EvalOptions::default()).unwrap();
        assert_eq!((r.n_tasks, r.n_correct), (4, 2));
        assert_eq!(r.ex_overall, 0.5);
        assert_eq!(r.by_difficulty[&Difficulty::Simple], DifficultyStats { n: 2, correct: 1, ex: 0.5 });
        assert_eq!(r.by_difficulty[&Difficulty::Moderate].correct, 0);
        assert_eq!(r.gold_failures, vec!["4".to_string()]);
        assert_eq!(r.stage_histogram[&Stage::Sc], 2);
        assert_eq!(r.stage_histogram[&Stage::Majority], 0);
        assert_eq!(r.timing.gen_time_ms, 28);

        let excl = EvalOptions {
            exclude_gold_failures: true,
            ..EvalOptions::default()
        };
        let r = execution_accuracy(&preds, &tasks, &reg, &excl).unwrap();
        assert_eq!((r.n_tasks, r.n_correct), (3, 2));
        assert!(!r.by_difficulty.contains_key(&Difficulty::Moderate));
    }

    #[test]
    fn unknown_task_is_an_error() {
        let (_d, reg, tasks) = fixture();
        let err = execution_accuracy(&[pred("zz", "SELECT 1", Stage::Sc)], &tasks, &reg, &EvalOptions::default()).unwrap_err();
        assert!(matches!(err, EvalError::UnknownTask(id) if id == "zz"));
    }

    #[test]
    fn table_layout() {
        let (_d, reg, tasks) = fixture();
        let preds = vec![pred("1", "SELECT a FROM t", Stage::Sc), pred("3", "SELECT 1", Stage::Majority)];
        let r = execution_accuracy(&preds, &tasks, &reg, &EvalOptions::default()).unwrap();
        let table = r.render_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "               Simple   Moderate  Challenge        All");
        assert_eq!(lines[1], "count               1          0          1          2");
        assert_eq!(lines[2], "EX (%)         100.00          -       0.00      50.00");
        assert!(table.contains("majority            1\n"));
        assert!(!table.contains("Unknown"));
    }

    #[test]
    fn json_omits_timing() {
        let (_d, reg, tasks) = fixture();
        let r = execution_accuracy(&[pred("1", "SELECT a FROM t", Stage::Sc)], &tasks, &reg, &EvalOptions::default()).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("time"));
        assert!(json.contains("\"simple\""));
    }
}

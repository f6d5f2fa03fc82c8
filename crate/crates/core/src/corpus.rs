//! Text-to-SQL corpora: task records, chain-of-thought filtering and
//! normalization for SFT, and merge-revision sample synthesis.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use crate::consensus::group_candidates;
use crate::executor::{results_equivalent, ExecutionOutcome};
use crate::prompts::{
    render_generation_prompt, render_merge_prompt, truncate_exec_result, GenerationPromptInput, MergePromptInput, TruncationLimits,
};
use crate::sampler::{parse_model_output, ParsedCandidate};
use crate::sqltext::{count_occurrences, first_keyword, locate_final_sql, normalize_whitespace, strip_fences};

pub const DEFAULT_TOKEN_LIMIT: usize = 7000;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("no SQL statement found in the chain of thought")]
    NoSqlFound,
    #[error("final SQL does not start with SELECT")]
    NotSelect,
    #[error("{candidates} candidates but {outcomes} execution outcomes")]
    LengthMismatch { candidates: usize, outcomes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum Difficulty {
    Simple,
    Moderate,
    Challenge,
    #[default]
    Unknown,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [Difficulty::Simple, Difficulty::Moderate, Difficulty::Challenge, Difficulty::Unknown];

    pub fn parse(s: &str) -> Difficulty {
        match s.trim().to_ascii_lowercase().as_str() {
            "simple" | "easy" => Difficulty::Simple,
            "moderate" | "medium" => Difficulty::Moderate,
            "challenge" | "challenging" | "hard" => Difficulty::Challenge,
            _ => Difficulty::Unknown,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Simple => "simple",
            Difficulty::Moderate => "moderate",
            Difficulty::Challenge => "challenge",
            Difficulty::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Difficulty {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = Option::<String>::deserialize(d)?;
        Ok(s.map(|s| Difficulty::parse(&s)).unwrap_or_default())
    }
}

/// One Text-to-SQL problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub db_id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    /// Empty when the corpus does not carry it; callers may fill it from the
    /// database.
    #[serde(default)]
    pub schema_ddl: String,
    pub gold_sql: String,
    #[serde(default)]
    pub difficulty: Difficulty,
}

impl TaskRecord {
    pub fn prompt_input(&self) -> GenerationPromptInput {
        GenerationPromptInput {
            schema_ddl: self.schema_ddl.clone(),
            evidence: self.evidence.clone(),
            question: self.question.clone(),
        }
    }
}

/// A corpus line: a task plus an optional synthetic chain of thought.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    #[serde(flatten)]
    pub task: TaskRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTrainingSample {
    pub task: TaskRecord,
    pub cot: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedSample {
    #[serde(flatten)]
    pub task: TaskRecord,
    pub think: String,
    pub answer_sql: String,
    /// `<think>…</think>\n<answer>…</answer>`, the SFT target.
    pub rendered: String,
}

/// Filter rules, in the order they are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NoSelect,
    DuplicateSqlInCot,
    CommentMarker,
    PromptTooLong,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::NoSelect => "no_select",
            RejectReason::DuplicateSqlInCot => "duplicate_sql_in_cot",
            RejectReason::CommentMarker => "comment_marker",
            RejectReason::PromptTooLong => "prompt_too_long",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterVerdict {
    Accept,
    Reject(RejectReason),
}

/// A line of the rejection report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub task_id: String,
    pub rule: RejectReason,
}

/// Token count proxy: `ceil(chars / 4)`.
pub fn estimate_prompt_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// Split a chain of thought into (reasoning before the final SQL, final SQL).
///
/// Text already in think/answer form is taken as is. Otherwise the final SQL
/// is the last fenced block (or last SELECT statement) and everything after
/// it is dropped.
fn split_cot(cot: &str) -> Option<(String, String)> {
    if cot.contains("<answer>") && cot.contains("</answer>") {
        let parsed = parse_model_output(cot);
        if let (Some(think), Some(sql)) = (parsed.think, parsed.answer_sql) {
            return Some((think, sql));
        }
    }
    let loc = locate_final_sql(cot)?;
    let sql = strip_fences(&loc.sql);
    if sql.is_empty() {
        return None;
    }
    Some((cot[..loc.span.start].trim().to_string(), sql))
}

/// Leading comments and parentheses are skipped, so a commented query is
/// reported by the comment rule rather than as a non-SELECT.
fn opens_with_select(sql: &str) -> bool {
    first_keyword(sql).as_deref() == Some("SELECT")
}

/// Apply the training-sample rules; the first rule that fires is reported.
pub fn filter_training_sample(sample: &RawTrainingSample, token_limit: usize) -> FilterVerdict {
    let Some((_, sql)) = split_cot(&sample.cot) else {
        return FilterVerdict::Reject(RejectReason::NoSelect);
    };
    if !opens_with_select(&sql) {
        return FilterVerdict::Reject(RejectReason::NoSelect);
    }
    let needle = normalize_whitespace(sql.trim_end_matches(|c: char| c == ';' || c.is_whitespace()));
    if count_occurrences(&normalize_whitespace(&sample.cot), &needle) >= 2 {
        return FilterVerdict::Reject(RejectReason::DuplicateSqlInCot);
    }
    if sql.contains("--") {
        return FilterVerdict::Reject(RejectReason::CommentMarker);
    }
    let prompt = render_generation_prompt(&sample.task.prompt_input());
    if estimate_prompt_tokens(&prompt) > token_limit {
        return FilterVerdict::Reject(RejectReason::PromptTooLong);
    }
    FilterVerdict::Accept
}

pub fn render_think_answer(think: &str, sql: &str) -> String {
    format!("<think>\n{think}\n</think>\n<answer>\n{sql}\n</answer>")
}

/// Rewrite a chain of thought into `<think>` + `<answer>` form, dropping
/// anything after the final SQL and any markdown fences around it.
pub fn normalize_cot(sample: &RawTrainingSample) -> Result<NormalizedSample, CorpusError> {
    let (think, sql) = split_cot(&sample.cot).ok_or(CorpusError::NoSqlFound)?;
    if !opens_with_select(&sql) {
        return Err(CorpusError::NotSelect);
    }
    let sql = sql.replace("```", "").trim().to_string();
    Ok(NormalizedSample {
        task: sample.task.clone(),
        rendered: render_think_answer(&think, &sql),
        think,
        answer_sql: sql,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeTrainingSample {
    #[serde(flatten)]
    pub task: TaskRecord,
    pub draft_a: String,
    pub exec_a: String,
    pub votes_a: usize,
    pub draft_b: String,
    pub exec_b: String,
    pub votes_b: usize,
    pub label_sql: String,
    /// Rendered merge-revision prompt for these drafts.
    pub prompt: String,
}

/// Build a merge-revision sample from candidate executions: the two
/// highest-vote groups become the drafts, labeled with whichever matches the
/// gold result. Returns `None` with fewer than two groups or when neither
/// draft is correct.
pub fn build_merge_training_sample(
    task: &TaskRecord,
    candidates: &[ParsedCandidate],
    outcomes: &[ExecutionOutcome],
    gold: &ExecutionOutcome,
    limits: &TruncationLimits,
) -> Result<Option<MergeTrainingSample>, CorpusError> {
    let groups = group_candidates(candidates, outcomes).map_err(|_| CorpusError::LengthMismatch {
        candidates: candidates.len(),
        outcomes: outcomes.len(),
    })?;
    let [a, b, ..] = groups.as_slice() else {
        return Ok(None);
    };
    let exec_of = |i: usize| &outcomes[i];
    let label = if results_equivalent(exec_of(a.first_index()), gold) {
        a.representative_sql.clone()
    } else if results_equivalent(exec_of(b.first_index()), gold) {
        b.representative_sql.clone()
    } else {
        return Ok(None);
    };
    let exec_a = truncate_exec_result(exec_of(a.first_index()), limits);
    let exec_b = truncate_exec_result(exec_of(b.first_index()), limits);
    let prompt = render_merge_prompt(&MergePromptInput {
        base: task.prompt_input(),
        draft_a: a.representative_sql.clone(),
        exec_a_rendered: exec_a.clone(),
        draft_b: b.representative_sql.clone(),
        exec_b_rendered: exec_b.clone(),
    });
    Ok(Some(MergeTrainingSample {
        task: task.clone(),
        draft_a: a.representative_sql.clone(),
        exec_a,
        votes_a: a.votes,
        draft_b: b.representative_sql.clone(),
        exec_b,
        votes_b: b.votes,
        label_sql: label,
        prompt,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{normalize_rows, Cell, ErrorKind};
    use std::time::Duration;

    fn task() -> TaskRecord {
        TaskRecord {
            task_id: "t1".into(),
            db_id: "db".into(),
            question: "List x.".into(),
            evidence: None,
            schema_ddl: "CREATE TABLE t (x INT);".into(),
            gold_sql: "SELECT x FROM t".into(),
            difficulty: Difficulty::Simple,
        }
    }

    fn raw(cot: &str) -> RawTrainingSample {
        RawTrainingSample {
            task: task(),
            cot: cot.into(),
        }
    }

    fn verdict(cot: &str) -> FilterVerdict {
        filter_training_sample(&raw(cot), DEFAULT_TOKEN_LIMIT)
    }

    #[test]
    fn insert_rejected_as_no_select() {
        assert_eq!(
            verdict("Add the row.\n```sql\nINSERT INTO t VALUES (1)\n```"),
            FilterVerdict::Reject(RejectReason::NoSelect)
        );
        assert_eq!(verdict("no query here"), FilterVerdict::Reject(RejectReason::NoSelect));
    }

    #[test]
    fn duplicate_sql_rejected() {
        let cot = "Draft: SELECT x FROM t\n\nFinal:\n```sql\nSELECT x\n  FROM t\n```";
        assert_eq!(verdict(cot), FilterVerdict::Reject(RejectReason::DuplicateSqlInCot));
    }

    #[test]
    fn comment_marker_rejected() {
        assert_eq!(
            verdict("Plan.\n```sql\nSELECT a FROM t -- all rows\n```"),
            FilterVerdict::Reject(RejectReason::CommentMarker)
        );
    }

    #[test]
    fn clean_sample_accepted() {
        assert_eq!(verdict("Plan.\n```sql\nSELECT x FROM t\n```\nDone."), FilterVerdict::Accept);
    }

    #[test]
    fn long_prompt_rejected() {
        let mut s = raw("```sql\nSELECT x FROM t\n```");
        s.task.schema_ddl = "x".repeat(28_001);
        assert_eq!(
            filter_training_sample(&s, DEFAULT_TOKEN_LIMIT),
            FilterVerdict::Reject(RejectReason::PromptTooLong)
        );
    }

    #[test]
    fn rule_order_first_match_wins() {
        // duplicated and commented: duplicate is checked first
        let cot = "SELECT a FROM t -- c\n\n```sql\nSELECT a FROM t -- c\n```";
        assert_eq!(verdict(cot), FilterVerdict::Reject(RejectReason::DuplicateSqlInCot));
    }

    #[test]
    fn token_estimate() {
        assert_eq!(estimate_prompt_tokens(""), 0);
        assert_eq!(estimate_prompt_tokens("SELECT"), 2);
        assert_eq!(estimate_prompt_tokens(&"a".repeat(28_001)), 7001);
        assert_eq!(estimate_prompt_tokens(&"a".repeat(28_000)), 7000);
        assert_eq!(estimate_prompt_tokens("éééé"), 1);
    }

    #[test]
    fn normalize_drops_fences_and_trailer() {
        let n = normalize_cot(&raw("First join t1…\n```sql\nSELECT x FROM t\n```\nThis query returns…")).unwrap();
        assert_eq!(n.think, "First join t1…");
        assert_eq!(n.answer_sql, "SELECT x FROM t");
        assert_eq!(
            n.rendered,
            "<think>\nFirst join t1…\n</think>\n<answer>\nSELECT x FROM t\n</answer>"
        );
    }

    #[test]
    fn normalize_is_idempotent() {
        let n = normalize_cot(&raw("Reason.\n```sql\nSELECT x FROM t\n```\nTrailer")).unwrap();
        let again = normalize_cot(&raw(&n.rendered)).unwrap();
        assert_eq!(again, n);
    }

    #[test]
    fn normalize_without_trailing_text() {
        let n = normalize_cot(&raw("We count rows. SELECT count(*) FROM t")).unwrap();
        assert_eq!(n.think, "We count rows.");
        assert_eq!(n.answer_sql, "SELECT count(*) FROM t");
    }

    #[test]
    fn normalize_errors() {
        assert_eq!(normalize_cot(&raw("nothing")).unwrap_err(), CorpusError::NoSqlFound);
        assert_eq!(
            normalize_cot(&raw("```sql\nDELETE FROM t\n```")).unwrap_err(),
            CorpusError::NotSelect
        );
    }

    #[test]
    fn difficulty_aliases() {
        let t: TaskRecord =
            serde_json::from_str(r#"{"task_id":"1","db_id":"d","question":"q","gold_sql":"SELECT 1","difficulty":"challenging"}"#).unwrap();
        assert_eq!(t.difficulty, Difficulty::Challenge);
        assert_eq!(t.schema_ddl, "");
        let t: TaskRecord = serde_json::from_str(r#"{"task_id":"1","db_id":"d","question":"q","gold_sql":"SELECT 1"}"#).unwrap();
        assert_eq!(t.difficulty, Difficulty::Unknown);
    }

    fn fp(v: i64) -> ExecutionOutcome {
        ExecutionOutcome::success(normalize_rows(vec![vec![Cell::Int(v)]]).unwrap(), Duration::ZERO)
    }

    fn cands(n: usize) -> Vec<ParsedCandidate> {
        (0..n)
            .map(|i| ParsedCandidate {
                raw: String::new(),
                think: None,
                answer_sql: Some(format!("SELECT {i}")),
                format_ok: true,
            })
            .collect()
    }

    #[test]
    fn merge_sample_single_group_is_none() {
        let outs: Vec<_> = (0..8).map(|_| fp(1)).collect();
        let s = build_merge_training_sample(&task(), &cands(8), &outs, &fp(1), &TruncationLimits::default()).unwrap();
        assert!(s.is_none());
    }

    #[test]
    fn merge_sample_length_mismatch() {
        let err = build_merge_training_sample(&task(), &cands(3), &[fp(1)], &fp(1), &TruncationLimits::default()).unwrap_err();
        assert_eq!(
            err,
            CorpusError::LengthMismatch {
                candidates: 3,
                outcomes: 1
            }
        );
    }

    #[test]
    fn merge_sample_labels_draft_b_when_it_matches_gold() {
        let e = ExecutionOutcome::error(ErrorKind::Syntax, "x", Duration::ZERO);
        let outs = vec![fp(1), fp(2), fp(1), e];
        let s = build_merge_training_sample(&task(), &cands(4), &outs, &fp(2), &TruncationLimits::default())
            .unwrap()
            .unwrap();
        assert_eq!((s.draft_a.as_str(), s.draft_b.as_str()), ("SELECT 0", "SELECT 1"));
        assert_eq!(s.label_sql, "SELECT 1");
        assert_eq!((s.votes_a, s.votes_b), (2, 1));
        assert!(s.prompt.contains("1. SELECT 0\nExecution result\n[(1,)]"));
    }
}

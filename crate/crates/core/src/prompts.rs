//! Generation and merge-revision prompt rendering.
//!
//! The templates live in `templates/` as plain text and are embedded at build
//! time. See `templates/PLACEHOLDERS.md` for the placeholder list.

use std::path::Path;

use crate::executor::{ExecResult, ExecutionOutcome};
use crate::sqltext::normalize_whitespace;

pub const GENERATION_TEMPLATE: &str = include_str!("../templates/generation.txt");
pub const MERGE_TEMPLATE: &str = include_str!("../templates/merge.txt");

pub const TRUNCATION_MARKER: &str = "… (truncated)";

pub const PH_SCHEMA: &str = "{DATABASE SCHEMA}";
pub const PH_EVIDENCE: &str = "{EVIDENCE}";
pub const PH_QUESTION: &str = "{QUESTION}";
pub const PH_SQL1: &str = "{PREDICT_SQL1}";
pub const PH_RESULT1: &str = "{EXECUTE_RESULT1}";
pub const PH_SQL2: &str = "{PREDICT_SQL2}";
pub const PH_RESULT2: &str = "{EXECUTE_RESULT2}";

pub const PLACEHOLDERS: &[&str] = &[PH_SCHEMA, PH_EVIDENCE, PH_QUESTION, PH_SQL1, PH_RESULT1, PH_SQL2, PH_RESULT2];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error("draft SQLs are identical after whitespace normalization")]
    IdenticalDrafts,
    #[error("truncation limits must be positive")]
    InvalidLimits,
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationPromptInput {
    pub schema_ddl: String,
    pub evidence: Option<String>,
    pub question: String,
}

impl GenerationPromptInput {
    pub fn new(schema_ddl: impl Into<String>, evidence: Option<String>, question: impl Into<String>) -> Result<Self, PromptError> {
        let question = question.into();
        if question.trim().is_empty() {
            return Err(PromptError::EmptyQuestion);
        }
        Ok(GenerationPromptInput {
            schema_ddl: schema_ddl.into(),
            evidence,
            question,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergePromptInput {
    pub base: GenerationPromptInput,
    pub draft_a: String,
    pub exec_a_rendered: String,
    pub draft_b: String,
    pub exec_b_rendered: String,
}

impl MergePromptInput {
    pub fn new(
        base: GenerationPromptInput,
        draft_a: impl Into<String>,
        exec_a_rendered: impl Into<String>,
        draft_b: impl Into<String>,
        exec_b_rendered: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let draft_a = draft_a.into();
        let draft_b = draft_b.into();
        if normalize_whitespace(&draft_a) == normalize_whitespace(&draft_b) {
            return Err(PromptError::IdenticalDrafts);
        }
        Ok(MergePromptInput {
            base,
            draft_a,
            exec_a_rendered: exec_a_rendered.into(),
            draft_b,
            exec_b_rendered: exec_b_rendered.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncationLimits {
    pub max_rows: usize,
    pub max_chars: usize,
}

impl Default for TruncationLimits {
    fn default() -> Self {
        TruncationLimits {
            max_rows: 10,
            max_chars: 1000,
        }
    }
}

impl TruncationLimits {
    pub fn new(max_rows: usize, max_chars: usize) -> Result<Self, PromptError> {
        if max_rows == 0 || max_chars == 0 {
            return Err(PromptError::InvalidLimits);
        }
        Ok(TruncationLimits { max_rows, max_chars })
    }
}

/// A pair of templates. [`PromptSet::default`] uses the embedded assets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub generation: String,
    pub merge: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            generation: GENERATION_TEMPLATE.to_string(),
            merge: MERGE_TEMPLATE.to_string(),
        }
    }
}

impl PromptSet {
    pub fn from_files(generation: &Path, merge: &Path) -> Result<Self, PromptError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| PromptError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        Ok(PromptSet {
            generation: read(generation)?,
            merge: read(merge)?,
        })
    }

    pub fn render_generation(&self, input: &GenerationPromptInput) -> String {
        render(
            &self.generation,
            input.evidence.as_deref(),
            &[(PH_SCHEMA, &input.schema_ddl), (PH_QUESTION, &input.question)],
        )
    }

    pub fn render_merge(&self, input: &MergePromptInput) -> String {
        render(
            &self.merge,
            input.base.evidence.as_deref(),
            &[
                (PH_SCHEMA, &input.base.schema_ddl),
                (PH_QUESTION, &input.base.question),
                (PH_SQL1, &input.draft_a),
                (PH_RESULT1, &input.exec_a_rendered),
                (PH_SQL2, &input.draft_b),
                (PH_RESULT2, &input.exec_b_rendered),
            ],
        )
    }
}

pub fn render_generation_prompt(input: &GenerationPromptInput) -> String {
    PromptSet::default().render_generation(input)
}

pub fn render_merge_prompt(input: &MergePromptInput) -> String {
    PromptSet::default().render_merge(input)
}

fn render(template: &str, evidence: Option<&str>, values: &[(&str, &str)]) -> String {
    let evidence = evidence.filter(|e| !e.trim().is_empty());
    let template = template.strip_suffix('\n').unwrap_or(template);
    let template = template.strip_suffix('\r').unwrap_or(template);

    let mut out = String::with_capacity(template.len() + 1024);
    let mut first = true;
    for line in template.split('\n') {
        if evidence.is_none() && line.trim() == PH_EVIDENCE {
            continue;
        }
        if !first {
            out.push('\n');
        }
        first = false;
        substitute_line(line, evidence, values, &mut out);
    }
    out
}

/// Single left-to-right pass; substituted text is never re-scanned.
fn substitute_line(line: &str, evidence: Option<&str>, values: &[(&str, &str)], out: &mut String) {
    let mut rest = line;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = PLACEHOLDERS.iter().find(|ph| tail.starts_with(**ph));
        match hit {
            Some(ph) => {
                let value = if *ph == PH_EVIDENCE {
                    evidence
                } else {
                    values.iter().find(|(k, _)| k == ph).map(|(_, v)| *v)
                };
                match value {
                    Some(v) => out.push_str(v),
                    None => out.push_str(ph),
                }
                rest = &tail[ph.len()..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
}

/// Render an execution outcome for a merge prompt.
///
/// Success renders the fingerprint's rows as a bracketed list of tuples,
/// keeping at most `max_rows` rows and then `max_chars` characters; a cut is
/// flagged with [`TRUNCATION_MARKER`]. Errors render as
/// `ERROR: <kind>: <message>` and timeouts as `TIMEOUT`.
pub fn truncate_exec_result(outcome: &ExecutionOutcome, limits: &TruncationLimits) -> String {
    let (text, mut cut) = match &outcome.result {
        ExecResult::Success(fp) => {
            let shown = fp.rows.len().min(limits.max_rows);
            let rows: Vec<String> = fp.rows[..shown]
                .iter()
                .map(|row| {
                    let cells: Vec<String> = row.iter().map(|c| c.render()).collect();
                    if cells.len() == 1 {
                        format!("({},)", cells[0])
                    } else {
                        format!("({})", cells.join(", "))
                    }
                })
                .collect();
            (format!("[{}]", rows.join(", ")), shown < fp.rows.len())
        }
        ExecResult::Error { kind, message } => (format!("ERROR: {kind}: {message}"), false),
        ExecResult::Timeout => ("TIMEOUT".to_string(), false),
    };
    let mut text = text;
    if text.chars().count() > limits.max_chars {
        text = text.chars().take(limits.max_chars).collect();
        cut = true;
    }
    if cut {
        text.push_str(TRUNCATION_MARKER);
    }
    text
}

//! Execution-grounded voting and the two-stage corrective pipeline.
//!
//! Stage one samples many candidates, executes them, and groups them by
//! result fingerprint. A unanimous vote is final. Otherwise the two largest
//! groups are shown to a merge-revision model, whose samples are voted on the
//! same way.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::TaskRecord;
use crate::executor::{DatabaseRef, Digest, ExecutionOutcome, Executor, ResultFingerprint};
use crate::prompts::{truncate_exec_result, GenerationPromptInput, MergePromptInput, PromptSet, TruncationLimits};
use crate::sampler::{parse_model_output, ParsedCandidate, Sampler, SamplerError};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("{candidates} candidates but {outcomes} execution outcomes")]
    LengthMismatch { candidates: usize, outcomes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup {
    pub fingerprint: ResultFingerprint,
    /// Strictly increasing candidate indices.
    pub member_indices: Vec<usize>,
    pub votes: usize,
    /// SQL of the first member.
    pub representative_sql: String,
}

impl CandidateGroup {
    pub fn digest(&self) -> Digest {
        self.fingerprint.digest
    }

    pub fn first_index(&self) -> usize {
        self.member_indices[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteKind {
    Consistent,
    Contested,
    Abstain,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VoteOutcome {
    Consistent(CandidateGroup),
    /// Top two groups, the first with at least as many votes.
    Contested(CandidateGroup, CandidateGroup),
    Abstain,
}

impl VoteOutcome {
    pub fn kind(&self) -> VoteKind {
        match self {
            VoteOutcome::Consistent(_) => VoteKind::Consistent,
            VoteOutcome::Contested(..) => VoteKind::Contested,
            VoteOutcome::Abstain => VoteKind::Abstain,
        }
    }
}

/// Group keyed items and order the groups by (size desc, first index asc).
/// `None` keys (failed executions) are left out. This ranking is shared by
/// every vote in the crate.
pub fn rank_groups<K: Eq + Hash + Clone>(keys: impl IntoIterator<Item = Option<K>>) -> Vec<(K, Vec<usize>)> {
    let mut slot: HashMap<K, usize> = HashMap::new();
    let mut groups: Vec<(K, Vec<usize>)> = Vec::new();
    for (i, key) in keys.into_iter().enumerate() {
        let Some(key) = key else { continue };
        match slot.get(&key) {
            Some(&g) => groups[g].1.push(i),
            None => {
                slot.insert(key.clone(), groups.len());
                groups.push((key, vec![i]));
            }
        }
    }
    // groups are created in first-index order, so a stable sort on size keeps ties ordered
    groups.sort_by_key(|g| std::cmp::Reverse(g.1.len()));
    groups
}

/// One group per distinct successful fingerprint, largest first, ties broken
/// by earliest member. Errors and timeouts cast no vote.
pub fn group_candidates(candidates: &[ParsedCandidate], outcomes: &[ExecutionOutcome]) -> Result<Vec<CandidateGroup>, ConsensusError> {
    if candidates.len() != outcomes.len() {
        return Err(ConsensusError::LengthMismatch {
            candidates: candidates.len(),
            outcomes: outcomes.len(),
        });
    }
    let ranked = rank_groups(outcomes.iter().map(|o| o.digest()));
    Ok(ranked
        .into_iter()
        .map(|(_, members)| {
            let first = members[0];
            CandidateGroup {
                fingerprint: outcomes[first].fingerprint().cloned().expect("grouped outcome succeeded"),
                votes: members.len(),
                representative_sql: candidates[first].answer_sql.clone().unwrap_or_default(),
                member_indices: members,
            }
        })
        .collect())
}

/// Unanimity rule: one group is consistent, two or more are contested.
pub fn decide_vote(groups: &[CandidateGroup]) -> VoteOutcome {
    decide_vote_with(groups, None)
}

/// As [`decide_vote`], but a top group holding at least `dominance` of the
/// successful votes also counts as consistent.
pub fn decide_vote_with(groups: &[CandidateGroup], dominance: Option<f64>) -> VoteOutcome {
    match groups {
        [] => VoteOutcome::Abstain,
        [only] => VoteOutcome::Consistent(only.clone()),
        [first, second, ..] => {
            if let Some(threshold) = dominance {
                let total: usize = groups.iter().map(|g| g.votes).sum();
                if first.votes as f64 >= threshold * total as f64 {
                    return VoteOutcome::Consistent(first.clone());
                }
            }
            VoteOutcome::Contested(first.clone(), second.clone())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Unanimous (or dominant) first-stage vote.
    Sc,
    /// Contested vote resolved by the merge-revision model.
    CscMerge,
    /// Contested vote resolved by plurality, merge disabled.
    Majority,
    /// No candidate executed successfully.
    Fallback,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Sc, Stage::CscMerge, Stage::Majority, Stage::Fallback];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Sc => "sc",
            Stage::CscMerge => "csc_merge",
            Stage::Majority => "majority",
            Stage::Fallback => "fallback",
        }
    }
}

/// Which way the merge vote went, relative to the two drafts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeChoice {
    DraftA,
    DraftB,
    Novel,
    /// No merge sample executed; draft A is kept.
    NoResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub task_id: String,
    pub final_sql: String,
    pub stage: Stage,
    pub n_gen: usize,
    pub n_merge: usize,
    /// Vote counts of the first-stage groups, largest first.
    pub vote_histogram: Vec<usize>,
    pub wall_time_ms: u64,
    #[serde(default)]
    pub gen_time_ms: u64,
    #[serde(default)]
    pub merge_time_ms: u64,
    /// Candidate indices behind `final_sql`: first-stage members for `sc` and
    /// `majority`, merge-sample members for `csc_merge`, the chosen candidate
    /// for `fallback`.
    #[serde(default)]
    pub provenance: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_choice: Option<MergeChoice>,
}

/// Result of voting over merge-revision samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeDecision {
    pub final_sql: String,
    pub choice: MergeChoice,
    pub members: Vec<usize>,
}

/// Vote over merge samples. Among the top-voted groups the one matching draft
/// A's fingerprint wins, else the earliest. With no successful sample, draft
/// A is kept.
pub fn finalize_merge(
    draft_a: &CandidateGroup,
    draft_b: &CandidateGroup,
    merge_candidates: &[ParsedCandidate],
    merge_outcomes: &[ExecutionOutcome],
) -> Result<MergeDecision, ConsensusError> {
    let groups = group_candidates(merge_candidates, merge_outcomes)?;
    let Some(top) = groups.first() else {
        return Ok(MergeDecision {
            final_sql: draft_a.representative_sql.clone(),
            choice: MergeChoice::NoResult,
            members: vec![],
        });
    };
    let winner = groups
        .iter()
        .take_while(|g| g.votes == top.votes)
        .find(|g| g.digest() == draft_a.digest())
        .unwrap_or(top);
    let choice = if winner.digest() == draft_a.digest() {
        MergeChoice::DraftA
    } else if winner.digest() == draft_b.digest() {
        MergeChoice::DraftB
    } else {
        MergeChoice::Novel
    };
    Ok(MergeDecision {
        final_sql: winner.representative_sql.clone(),
        choice,
        members: winner.member_indices.clone(),
    })
}

/// Counters shared across concurrently processed tasks.
#[derive(Debug, Default)]
pub struct Metrics {
    pub tasks: AtomicU64,
    pub consistent: AtomicU64,
    pub merged: AtomicU64,
    pub majority: AtomicU64,
    pub fallback: AtomicU64,
    pub merge_prompts: AtomicU64,
}

impl Metrics {
    fn record(&self, stage: Stage) {
        self.tasks.fetch_add(1, Ordering::Relaxed);
        let counter = match stage {
            Stage::Sc => &self.consistent,
            Stage::CscMerge => &self.merged,
            Stage::Majority => &self.majority,
            Stage::Fallback => &self.fallback,
        };
        counter.fetch_add(1, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Default)]
pub struct CscSettings {
    pub limits: TruncationLimits,
    pub dominance_threshold: Option<f64>,
    pub prompts: PromptSet,
}

/// Everything observed while predicting one task.
#[derive(Debug, Clone)]
pub struct CscTrace {
    pub prediction: Prediction,
    pub candidates: Vec<ParsedCandidate>,
    pub outcomes: Vec<ExecutionOutcome>,
    pub vote: VoteOutcome,
    pub merge_prompt: Option<String>,
}

/// The two-stage pipeline. Without a merge sampler, contested votes resolve
/// to the plurality group (plain self-consistency).
#[derive(Debug, Clone)]
pub struct CscPipeline {
    pub generator: Sampler,
    pub merger: Option<Sampler>,
    pub executor: Executor,
    pub settings: CscSettings,
    pub metrics: Arc<Metrics>,
}

impl CscPipeline {
    pub fn new(generator: Sampler, merger: Option<Sampler>, executor: Executor, settings: CscSettings) -> Self {
        CscPipeline {
            generator,
            merger,
            executor,
            settings,
            metrics: Arc::new(Metrics::default()),
        }
    }

    pub async fn run(&self, task: &TaskRecord, db: &DatabaseRef) -> Result<Prediction, SamplerError> {
        Ok(self.run_traced(task, db).await?.prediction)
    }

    pub async fn run_traced(&self, task: &TaskRecord, db: &DatabaseRef) -> Result<CscTrace, SamplerError> {
        let started = Instant::now();
        let base = GenerationPromptInput {
            schema_ddl: task.schema_ddl.clone(),
            evidence: task.evidence.clone(),
            question: task.question.clone(),
        };
        let prompt = self.settings.prompts.render_generation(&base);

        let raw = self.generator.sample(&prompt).await?;
        let candidates: Vec<ParsedCandidate> = raw.iter().map(|r| parse_model_output(r)).collect();
        let sqls: Vec<Option<String>> = candidates.iter().map(|c| c.answer_sql.clone()).collect();
        let outcomes = self.executor.execute_batch(db, &sqls).await;
        let groups = group_candidates(&candidates, &outcomes).expect("aligned by construction");
        let vote = decide_vote_with(&groups, self.settings.dominance_threshold);
        let gen_time = started.elapsed();

        let mut prediction = Prediction {
            task_id: task.task_id.clone(),
            final_sql: String::new(),
            stage: Stage::Fallback,
            n_gen: candidates.len(),
            n_merge: 0,
            vote_histogram: groups.iter().map(|g| g.votes).collect(),
            wall_time_ms: 0,
            gen_time_ms: gen_time.as_millis() as u64,
            merge_time_ms: 0,
            provenance: vec![],
            merge_choice: None,
        };
        let mut merge_prompt = None;

        match (&vote, &self.merger) {
            (VoteOutcome::Consistent(winner), _) => {
                prediction.final_sql = winner.representative_sql.clone();
                prediction.stage = Stage::Sc;
                prediction.provenance = winner.member_indices.clone();
            }
            (VoteOutcome::Contested(a, _), None) => {
                prediction.final_sql = a.representative_sql.clone();
                prediction.stage = Stage::Majority;
                prediction.provenance = a.member_indices.clone();
            }
            (VoteOutcome::Contested(a, b), Some(merger)) => {
                let merge_started = Instant::now();
                let input = MergePromptInput {
                    base,
                    draft_a: a.representative_sql.clone(),
                    exec_a_rendered: truncate_exec_result(&outcomes[a.first_index()], &self.settings.limits),
                    draft_b: b.representative_sql.clone(),
                    exec_b_rendered: truncate_exec_result(&outcomes[b.first_index()], &self.settings.limits),
                };
                let mprompt = self.settings.prompts.render_merge(&input);
                self.metrics.merge_prompts.fetch_add(1, Ordering::Relaxed);
                let mraw = merger.sample(&mprompt).await?;
                let mcands: Vec<ParsedCandidate> = mraw.iter().map(|r| parse_model_output(r)).collect();
                let msqls: Vec<Option<String>> = mcands.iter().map(|c| c.answer_sql.clone()).collect();
                let mouts = self.executor.execute_batch(db, &msqls).await;
                let decision = finalize_merge(a, b, &mcands, &mouts).expect("aligned by construction");
                prediction.final_sql = decision.final_sql;
                prediction.stage = Stage::CscMerge;
                prediction.n_merge = mcands.len();
                prediction.provenance = decision.members;
                prediction.merge_choice = Some(decision.choice);
                prediction.merge_time_ms = merge_started.elapsed().as_millis() as u64;
                merge_prompt = Some(mprompt);
            }
            (VoteOutcome::Abstain, _) => {
                if let Some(i) = candidates.iter().position(|c| c.answer_sql.is_some()) {
                    prediction.final_sql = candidates[i].answer_sql.clone().unwrap_or_default();
                    prediction.provenance = vec![i];
                }
                prediction.stage = Stage::Fallback;
            }
        }
        prediction.wall_time_ms = started.elapsed().as_millis() as u64;
        self.metrics.record(prediction.stage);
        Ok(CscTrace {
            prediction,
            candidates,
            outcomes,
            vote,
            merge_prompt,
        })
    }
}

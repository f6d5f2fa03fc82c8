//! pass@k and consistency@k over a fixed pool of samples per task.

use std::hash::Hash;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::consensus::rank_groups;

/// Subset counts up to this size are enumerated exactly.
pub const EXACT_ENUMERATION_LIMIT: u128 = 10_000;

/// Samples for one task, each keyed by its execution fingerprint (`None` for
/// failed executions), plus the gold key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSamples<K> {
    pub samples: Vec<Option<K>>,
    pub gold: Option<K>,
}

impl<K: Eq> TaskSamples<K> {
    pub fn correct(&self) -> Vec<bool> {
        self.samples
            .iter()
            .map(|s| s.is_some() && self.gold.is_some() && *s == self.gold)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub pass_at_k: f64,
    pub consistency_at_k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csc_at_k: Option<f64>,
}

/// Binomial coefficient, `None` on u128 overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = acc.checked_mul((n - i) as u128)? / (i + 1) as u128;
    }
    Some(acc)
}

/// Unbiased pass@k for one task with `c` correct out of `n`:
/// `1 - C(n-c, k) / C(n, k)`.
pub fn pass_at_k_single(n: usize, c: usize, k: usize) -> Result<f64, EvalError> {
    if k > n {
        return Err(EvalError::KExceedsN { k, n });
    }
    let c = c.min(n);
    if n - c < k {
        return Ok(1.0);
    }
    match (binomial((n - c) as u64, k as u64), binomial(n as u64, k as u64)) {
        (Some(miss), Some(all)) => Ok((all - miss) as f64 / all as f64),
        _ => {
            let miss = (1..=k).fold(1.0f64, |acc, i| acc * (n - c - k + i) as f64 / (n - k + i) as f64);
            Ok(1.0 - miss)
        }
    }
}

/// Mean pass@k over tasks given per-sample correctness bits.
pub fn pass_at_k(tasks: &[Vec<bool>], k: usize) -> Result<f64, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sum = 0.0;
    for bits in tasks {
        let c = bits.iter().filter(|b| **b).count();
        sum += pass_at_k_single(bits.len(), c, k)?;
    }
    Ok(sum / tasks.len() as f64)
}

fn vote_is_correct<K: Eq + Hash + Clone>(task: &TaskSamples<K>, subset: &[usize]) -> bool {
    let ranked = rank_groups(subset.iter().map(|&i| task.samples[i].clone()));
    match (ranked.first(), &task.gold) {
        (Some((key, _)), Some(gold)) => key == gold,
        _ => false,
    }
}

/// Lexicographic k-combinations of 0..n.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Fraction of all k-subsets whose majority vote is correct.
pub fn consistency_at_k_exact<K: Eq + Hash + Clone>(task: &TaskSamples<K>, k: usize) -> Result<f64, EvalError> {
    let n = task.samples.len();
    if k > n {
        return Err(EvalError::KExceedsN { k, n });
    }
    if k == 0 {
        return Ok(0.0);
    }
    let (mut hits, mut total) = (0u64, 0u64);
    for_each_combination(n, k, |subset| {
        total += 1;
        hits += vote_is_correct(task, subset) as u64;
    });
    Ok(hits as f64 / total as f64)
}

/// Monte-Carlo consistency@k.
///
/// The vote can only be correct when the subset holds a correct sample, so the
/// estimate is `pass@k × P(vote correct | subset holds a correct sample)`,
/// with the conditional probability estimated from `trials` subsets drawn
/// uniformly without replacement and rejected unless they hold a correct
/// sample. This keeps the estimate at or below pass@k.
pub fn consistency_at_k_monte_carlo<K: Eq + Hash + Clone>(
    task: &TaskSamples<K>,
    k: usize,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, EvalError> {
    let n = task.samples.len();
    if k > n {
        return Err(EvalError::KExceedsN { k, n });
    }
    let correct = task.correct();
    let c = correct.iter().filter(|b| **b).count();
    if c == 0 || k == 0 || trials == 0 {
        return Ok(0.0);
    }
    let pass = pass_at_k_single(n, c, k)?;
    let mut hits = 0usize;
    let mut accepted = 0usize;
    let mut subset = Vec::with_capacity(k);
    while accepted < trials {
        subset.clear();
        subset.extend(index::sample(rng, n, k).iter());
        if !subset.iter().any(|&i| correct[i]) {
            continue;
        }
        subset.sort_unstable();
        accepted += 1;
        hits += vote_is_correct(task, &subset) as usize;
    }
    Ok(pass * hits as f64 / trials as f64)
}

fn task_rng(seed: u64, task: usize, k: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ ((task as u64) << 20) ^ k as u64)
}

/// Mean consistency@k: exact when C(n, k) ≤ [`EXACT_ENUMERATION_LIMIT`],
/// Monte-Carlo with `trials` subsets otherwise.
pub fn consistency_at_k<K: Eq + Hash + Clone>(tasks: &[TaskSamples<K>], k: usize, trials: usize, seed: u64) -> Result<f64, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sum = 0.0;
    for (i, t) in tasks.iter().enumerate() {
        let n = t.samples.len();
        let exact = binomial(n as u64, k as u64).is_some_and(|c| c <= EXACT_ENUMERATION_LIMIT);
        sum += if exact {
            consistency_at_k_exact(t, k)?
        } else {
            consistency_at_k_monte_carlo(t, k, trials, &mut task_rng(seed, i, k))?
        };
    }
    Ok(sum / tasks.len() as f64)
}

/// Powers of two up to `n`, plus `n` itself.
pub fn default_ks(n: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = std::iter::successors(Some(1usize), |k| k.checked_mul(2))
        .take_while(|k| *k <= n)
        .collect();
    if n > 0 && ks.last() != Some(&n) {
        ks.push(n);
    }
    ks
}

/// pass@k and consistency@k for every `k`; tasks must share a sample count ≥ max k.
pub fn curve<K: Eq + Hash + Clone>(tasks: &[TaskSamples<K>], ks: &[usize], trials: usize, seed: u64) -> Result<Vec<CurvePoint>, EvalError> {
    let bits: Vec<Vec<bool>> = tasks.iter().map(TaskSamples::correct).collect();
    ks.iter()
        .map(|&k| {
            Ok(CurvePoint {
                k,
                pass_at_k: pass_at_k(&bits, k)?,
                consistency_at_k: consistency_at_k(tasks, k, trials, seed)?,
                csc_at_k: None,
            })
        })
        .collect()
}

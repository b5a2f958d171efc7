//! Layer-adaptive KV selection.
//!
//! Each layer's candidates are scored by cosine similarity to that layer's
//! criterion, the scores are softmax-normalised and sorted, and a single
//! global cumulative-mass threshold `p` decides how many candidates every
//! layer keeps: layer `l` keeps the shortest prefix whose mass reaches `p`.
//! `p` is found by bisection so that the per-layer counts sum to the budget.

mod oracle;

pub use oracle::{oracle_select, oracle_select_scores};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::cosine;

/// Default bisection tolerance on `p`.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("criterion for layer {layer} has zero norm")]
    ZeroCriterion { layer: usize },
    #[error("layer {layer}: candidate dimension {got} does not match criterion dimension {expected}")]
    Dimension { layer: usize, expected: usize, got: usize },
    #[error("{ranges} candidate layers but {criteria} criteria")]
    LayerCount { ranges: usize, criteria: usize },
    #[error("budget {budget} exceeds the {available} available candidates")]
    BudgetOutOfRange { budget: usize, available: usize },
    #[error("non-finite score in layer {layer}")]
    NonFinite { layer: usize },
    #[error("tolerance must be positive, got {0}")]
    Epsilon(f64),
}

/// Cosine similarity of every candidate to `criterion`, in candidate order.
/// Zero-norm candidates score −1.
pub fn score_layer<C: AsRef<[f32]>>(candidates: &[C], criterion: &[f32]) -> Result<Vec<f64>, SelectError> {
    if criterion.iter().all(|&x| x == 0.0) {
        return Err(SelectError::ZeroCriterion { layer: 0 });
    }
    candidates
        .iter()
        .map(|c| {
            let c = c.as_ref();
            if c.len() != criterion.len() {
                return Err(SelectError::Dimension { layer: 0, expected: criterion.len(), got: c.len() });
            }
            Ok(cosine(c, criterion).unwrap_or(-1.0))
        })
        .collect()
}

/// One layer's candidates ordered by descending normalised score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrioritySequence {
    /// Candidate ids (temporal positions) in priority order.
    pub order: Vec<usize>,
    /// Normalised scores, aligned with `order`.
    pub probs: Vec<f64>,
    /// Running sums of `probs`, clamped to 1 with the last entry exactly 1.
    pub cumulative: Vec<f64>,
}

impl PrioritySequence {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Sum of the normalised scores before clamping.
    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Softmax (with max subtraction) followed by a stable descending sort.
pub fn normalize_and_sort(scores: &[f64]) -> PrioritySequence {
    if scores.is_empty() {
        return PrioritySequence { order: Vec::new(), probs: Vec::new(), cumulative: Vec::new() };
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| exps[b].total_cmp(&exps[a]));
    let probs: Vec<f64> = order.iter().map(|&i| exps[i] / sum).collect();
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cumulative.push(acc.min(1.0));
    }
    *cumulative.last_mut().unwrap() = 1.0;
    PrioritySequence { order, probs, cumulative }
}

/// `K^p`: the smallest prefix length whose cumulative mass reaches `p`.
pub fn prefix_budget(seq: &PrioritySequence, p: f64) -> usize {
    if p <= 0.0 || seq.is_empty() {
        return 0;
    }
    (seq.cumulative.partition_point(|&c| c < p) + 1).min(seq.len())
}

fn total_prefix(seqs: &[PrioritySequence], p: f64) -> usize {
    seqs.iter().map(|s| prefix_budget(s, p)).sum()
}

/// Outcome of the threshold bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub p: f64,
    pub iterations: u32,
    /// `Σ K^p − N` at the returned `p`.
    pub delta: i64,
    /// Final bracket `[p1, p2]`.
    pub lower: f64,
    pub upper: f64,
}

/// Bisection for a global threshold `p` with `Σ_l K_l^p = N`. Stops as soon
/// as the budget is met exactly or once the bracket is no wider than `eps`;
/// in the latter case `delta` may be nonzero.
pub fn find_threshold(seqs: &[PrioritySequence], n: usize, eps: f64) -> Result<ThresholdSearch, SelectError> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(SelectError::Epsilon(eps));
    }
    let available: usize = seqs.iter().map(PrioritySequence::len).sum();
    if n > available {
        return Err(SelectError::BudgetOutOfRange { budget: n, available });
    }
    if n == 0 {
        return Ok(ThresholdSearch { p: 0.0, iterations: 0, delta: 0, lower: 0.0, upper: 0.0 });
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut p = 0.5;
    let mut delta = i64::MAX;
    let mut iterations = 0;
    while hi - lo > eps {
        p = 0.5 * (lo + hi);
        iterations += 1;
        delta = total_prefix(seqs, p) as i64 - n as i64;
        if delta == 0 {
            break;
        }
        if delta < 0 {
            lo = p;
        } else {
            hi = p;
        }
    }
    Ok(ThresholdSearch { p, iterations, delta, lower: lo, upper: hi })
}

/// Per-layer selection counts and how they were reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetAllocation {
    pub counts: Vec<usize>,
    pub budget: usize,
    /// Resolved threshold; `None` for non-adaptive splits.
    pub threshold: Option<f64>,
    pub iterations: u32,
    /// Items added (positive) or removed (negative) after the threshold.
    pub adjustment: i64,
}

impl BudgetAllocation {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Selected candidate ids per layer, in temporal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub indices: Vec<Vec<usize>>,
    pub allocation: BudgetAllocation,
    pub sequences: Vec<PrioritySequence>,
}

impl Selection {
    /// Total normalised score of the selected items across layers.
    pub fn retained_mass(&self) -> f64 {
        retained_mass(&self.sequences, &self.allocation.counts)
    }
}

/// Total normalised mass of the top `counts[l]` items of every layer.
pub fn retained_mass(seqs: &[PrioritySequence], counts: &[usize]) -> f64 {
    seqs.iter().zip(counts).map(|(s, &k)| s.probs[..k].iter().sum::<f64>()).sum()
}

/// Moves `counts` to sum to `n` one item at a time. Adds the excluded
/// frontier item with the largest normalised score (ties: smaller layer, then
/// earlier candidate); removes the included frontier item with the smallest
/// score (ties: larger layer, then later candidate). Returns the signed
/// number of items moved.
pub fn adjust_to_budget(seqs: &[PrioritySequence], counts: &mut [usize], n: usize) -> i64 {
    let mut moved = 0i64;
    while counts.iter().sum::<usize>() < n {
        let mut best: Option<(usize, f64, usize)> = None;
        for (l, s) in seqs.iter().enumerate() {
            let k = counts[l];
            if k == s.len() {
                continue;
            }
            let (prob, id) = (s.probs[k], s.order[k]);
            let better = match best {
                None => true,
                Some((bl, bp, bid)) => prob > bp || (prob == bp && (l, id) < (bl, bid)),
            };
            if better {
                best = Some((l, prob, id));
            }
        }
        let (l, _, _) = best.expect("budget within capacity");
        counts[l] += 1;
        moved += 1;
    }
    while counts.iter().sum::<usize>() > n {
        let mut worst: Option<(usize, f64, usize)> = None;
        for (l, s) in seqs.iter().enumerate() {
            let k = counts[l];
            if k == 0 {
                continue;
            }
            let (prob, id) = (s.probs[k - 1], s.order[k - 1]);
            let worse = match worst {
                None => true,
                Some((wl, wp, wid)) => prob < wp || (prob == wp && (l, id) > (wl, wid)),
            };
            if worse {
                worst = Some((l, prob, id));
            }
        }
        let (l, _, _) = worst.unwrap();
        counts[l] -= 1;
        moved -= 1;
    }
    moved
}

fn check_scores(scores: &[Vec<f64>], n: usize) -> Result<(), SelectError> {
    if let Some(layer) = scores.iter().position(|s| s.iter().any(|x| !x.is_finite())) {
        return Err(SelectError::NonFinite { layer });
    }
    let available: usize = scores.iter().map(Vec::len).sum();
    if n > available {
        return Err(SelectError::BudgetOutOfRange { budget: n, available });
    }
    Ok(())
}

fn temporal_indices(seqs: &[PrioritySequence], counts: &[usize]) -> Vec<Vec<usize>> {
    seqs.iter()
        .zip(counts)
        .map(|(s, &k)| {
            let mut ids = s.order[..k].to_vec();
            ids.sort_unstable();
            ids
        })
        .collect()
}

/// Layer-adaptive selection of `n` items from precomputed per-layer scores.
///
/// Runs the bisection; when it ends without an exact match, the final
/// bracket is refined to the largest cumulative level whose total does not
/// exceed `n`, and the remainder is filled by [`adjust_to_budget`].
pub fn select_from_scores(scores: &[Vec<f64>], n: usize, eps: f64) -> Result<Selection, SelectError> {
    check_scores(scores, n)?;
    let seqs: Vec<PrioritySequence> = scores.iter().map(|s| normalize_and_sort(s)).collect();
    let search = find_threshold(&seqs, n, eps)?;
    let mut threshold = search.p;
    if search.delta != 0 {
        threshold = search.lower;
        for c in seqs.iter().flat_map(|s| s.cumulative.iter().copied()) {
            if c > threshold && c <= search.upper && total_prefix(&seqs, c) <= n {
                threshold = c;
            }
        }
    }
    let mut counts: Vec<usize> = seqs.iter().map(|s| prefix_budget(s, threshold)).collect();
    let adjustment = adjust_to_budget(&seqs, &mut counts, n);
    let indices = temporal_indices(&seqs, &counts);
    let allocation =
        BudgetAllocation { counts, budget: n, threshold: Some(threshold), iterations: search.iterations, adjustment };
    Ok(Selection { indices, allocation, sequences: seqs })
}

fn score_all(ranges: &[Vec<&[f32]>], criteria: &[Vec<f32>]) -> Result<Vec<Vec<f64>>, SelectError> {
    if ranges.len() != criteria.len() {
        return Err(SelectError::LayerCount { ranges: ranges.len(), criteria: criteria.len() });
    }
    ranges
        .iter()
        .zip(criteria)
        .enumerate()
        .map(|(layer, (r, c))| {
            score_layer(r, c).map_err(|e| match e {
                SelectError::ZeroCriterion { .. } => SelectError::ZeroCriterion { layer },
                SelectError::Dimension { expected, got, .. } => SelectError::Dimension { layer, expected, got },
                other => other,
            })
        })
        .collect()
}

/// Scores every layer's candidate keys against its criterion and selects `n`
/// items across layers adaptively.
pub fn select_kv(ranges: &[Vec<&[f32]>], criteria: &[Vec<f32>], n: usize) -> Result<Selection, SelectError> {
    let scores = score_all(ranges, criteria)?;
    select_from_scores(&scores, n, DEFAULT_EPSILON)
}

/// Equal split of `n` across layers (remainder to the first layers), capped
/// by each layer's size with the overflow handed to layers that still have
/// room, in layer order.
pub fn uniform_counts(sizes: &[usize], n: usize) -> Vec<usize> {
    let layers = sizes.len().max(1);
    let mut counts: Vec<usize> =
        sizes.iter().enumerate().map(|(l, &s)| (n / layers + usize::from(l < n % layers)).min(s)).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    while left > 0 {
        let before = left;
        for (c, &s) in counts.iter_mut().zip(sizes) {
            if left > 0 && *c < s {
                *c += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    counts
}

/// Per-layer top-k selection with the uniform split of [`uniform_counts`].
pub fn select_uniform_from_scores(scores: &[Vec<f64>], n: usize) -> Result<Selection, SelectError> {
    check_scores(scores, n)?;
    let seqs: Vec<PrioritySequence> = scores.iter().map(|s| normalize_and_sort(s)).collect();
    let sizes: Vec<usize> = seqs.iter().map(PrioritySequence::len).collect();
    let counts = uniform_counts(&sizes, n);
    let indices = temporal_indices(&seqs, &counts);
    let allocation = BudgetAllocation { counts, budget: n, threshold: None, iterations: 0, adjustment: 0 };
    Ok(Selection { indices, allocation, sequences: seqs })
}

pub fn select_uniform(ranges: &[Vec<&[f32]>], criteria: &[Vec<f32>], n: usize) -> Result<Selection, SelectError> {
    let scores = score_all(ranges, criteria)?;
    select_uniform_from_scores(&scores, n)
}

/// How a budget is split across layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocation {
    Adaptive,
    Uniform,
}

impl Allocation {
    pub fn select(self, ranges: &[Vec<&[f32]>], criteria: &[Vec<f32>], n: usize) -> Result<Selection, SelectError> {
        match self {
            Allocation::Adaptive => select_kv(ranges, criteria, n),
            Allocation::Uniform => select_uniform(ranges, criteria, n),
        }
    }
}

#[cfg(test)]
mod tests;

//! Reference selector used to check the bisection: no search, just an
//! exhaustive scan over every threshold at which a prefix count can change.

use super::{check_scores, normalize_and_sort, prefix_budget, score_all, PrioritySequence, SelectError};

/// Candidate thresholds are `0` and every distinct cumulative value across
/// layers. The largest one whose total prefix count stays within `n` fixes
/// the base counts; the rest is filled greedily by normalised score with the
/// same tie rules as the adaptive selector.
pub fn oracle_select_scores(scores: &[Vec<f64>], n: usize) -> Result<Vec<Vec<usize>>, SelectError> {
    check_scores(scores, n)?;
    let seqs: Vec<PrioritySequence> = scores.iter().map(|s| normalize_and_sort(s)).collect();
    let mut thresholds: Vec<f64> = seqs.iter().flat_map(|s| s.cumulative.iter().copied()).collect();
    thresholds.push(0.0);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let counts_at = |t: f64| -> Vec<usize> { seqs.iter().map(|s| prefix_budget(s, t)).collect() };
    let best = thresholds.iter().copied().rfind(|&t| counts_at(t).iter().sum::<usize>() <= n).unwrap_or(0.0);
    let mut counts = counts_at(best);

    let mut pending: Vec<(f64, usize, usize)> = Vec::new();
    for (l, s) in seqs.iter().enumerate() {
        for r in counts[l]..s.len() {
            pending.push((s.probs[r], l, s.order[r]));
        }
    }
    pending.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let missing = n - counts.iter().sum::<usize>();
    for &(_, l, _) in pending.iter().take(missing) {
        counts[l] += 1;
    }

    Ok(seqs
        .iter()
        .zip(&counts)
        .map(|(s, &k)| {
            let mut ids = s.order[..k].to_vec();
            ids.sort_unstable();
            ids
        })
        .collect())
}

pub fn oracle_select(ranges: &[Vec<&[f32]>], criteria: &[Vec<f32>], n: usize) -> Result<Vec<Vec<usize>>, SelectError> {
    let scores = score_all(ranges, criteria)?;
    oracle_select_scores(&scores, n)
}

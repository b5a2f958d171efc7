use super::*;

fn seq_from_probs(probs: &[f64]) -> PrioritySequence {
    let mut acc = 0.0;
    let mut cumulative: Vec<f64> = probs
        .iter()
        .map(|p| {
            acc += p;
            f64::min(acc, 1.0)
        })
        .collect();
    *cumulative.last_mut().unwrap() = 1.0;
    PrioritySequence { order: (0..probs.len()).collect(), probs: probs.to_vec(), cumulative }
}

#[test]
fn parallel_criterion_scores_one() {
    let cands = [vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 1.0]];
    let s = score_layer(&cands, &[2.0, 4.0, 0.0]).unwrap();
    assert!((s[0] - 1.0).abs() < 1e-12);
    assert_eq!(s[1], 0.0);
}

#[test]
fn orthogonal_criterion_scores_zero() {
    let cands = [vec![1.0, 0.0, 0.0], vec![0.0, 3.0, 0.0]];
    assert_eq!(score_layer(&cands, &[0.0, 0.0, 5.0]).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn scores_match_direct_formula() {
    let cands: Vec<Vec<f32>> = (0..8).map(|i| (0..6).map(|j| ((i * 7 + j * 3) % 11) as f32 - 5.0).collect()).collect();
    let crit: Vec<f32> = (0..6).map(|j| (j as f32) - 2.5).collect();
    let got = score_layer(&cands, &crit).unwrap();
    for (c, g) in cands.iter().zip(got) {
        let d: f64 = c.iter().zip(&crit).map(|(a, b)| *a as f64 * *b as f64).sum();
        let na = c.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
        let nb = crit.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
        assert!((d / (na * nb) - g).abs() < 1e-6);
    }
}

#[test]
fn zero_candidate_scores_minus_one_and_zero_criterion_errors() {
    let cands = [vec![0.0, 0.0], vec![1.0, 0.0]];
    assert_eq!(score_layer(&cands, &[1.0, 0.0]).unwrap(), vec![-1.0, 1.0]);
    assert_eq!(score_layer(&cands, &[0.0, 0.0]).unwrap_err(), SelectError::ZeroCriterion { layer: 0 });
}

#[test]
fn softmax_closed_forms() {
    let s = normalize_and_sort(&[0.3, 0.3]);
    assert_eq!(s.probs, vec![0.5, 0.5]);
    assert_eq!(s.order, vec![0, 1]);
    let s = normalize_and_sort(&[1.0, 0.0]);
    assert!((s.probs[0] - 0.7310586).abs() < 1e-6);
    assert!((s.probs[1] - 0.2689414).abs() < 1e-6);
    assert_eq!(normalize_and_sort(&[-0.4]).probs, vec![1.0]);
}

#[test]
fn sort_is_stable_descending() {
    let s = normalize_and_sort(&[0.1, 0.5, 0.1, 0.5, 0.9]);
    assert_eq!(s.order, vec![4, 1, 3, 0, 2]);
    assert_eq!(*s.cumulative.last().unwrap(), 1.0);
}

#[test]
fn prefix_budget_examples() {
    let s = seq_from_probs(&[0.7, 0.2, 0.1]);
    assert_eq!(prefix_budget(&s, 0.0), 0);
    assert_eq!(prefix_budget(&s, 0.7), 1);
    assert_eq!(prefix_budget(&s, 0.71), 2);
    assert_eq!(prefix_budget(&s, 1.0), 3);
}

#[test]
fn two_layer_threshold_example() {
    let seqs = [seq_from_probs(&[0.7, 0.2, 0.1]), seq_from_probs(&[0.4, 0.3, 0.3])];
    let r = find_threshold(&seqs, 3, DEFAULT_EPSILON).unwrap();
    assert_eq!(r.delta, 0);
    assert!(r.p > 0.4 && r.p <= 0.7);
    assert_eq!((prefix_budget(&seqs[0], r.p), prefix_budget(&seqs[1], r.p)), (1, 2));
}

#[test]
fn zero_budget_threshold() {
    let seqs = [seq_from_probs(&[0.6, 0.4])];
    let r = find_threshold(&seqs, 0, DEFAULT_EPSILON).unwrap();
    assert_eq!((r.p, r.delta), (0.0, 0));
}

#[test]
fn full_budget_saturates() {
    let scores = vec![vec![0.9, -0.2, 0.4], vec![0.1, 0.1]];
    let sel = select_from_scores(&scores, 5, DEFAULT_EPSILON).unwrap();
    assert_eq!(sel.indices, vec![vec![0, 1, 2], vec![0, 1]]);
}

#[test]
fn budget_out_of_range() {
    let seqs = [seq_from_probs(&[1.0])];
    assert!(matches!(find_threshold(&seqs, 2, DEFAULT_EPSILON), Err(SelectError::BudgetOutOfRange { .. })));
    assert!(matches!(find_threshold(&seqs, 1, 0.0), Err(SelectError::Epsilon(_))));
}

#[test]
fn single_layer_is_top_n() {
    let scores = vec![vec![0.2, 0.9, -0.5, 0.9, 0.4]];
    let sel = select_from_scores(&scores, 3, DEFAULT_EPSILON).unwrap();
    assert_eq!(sel.indices, vec![vec![1, 3, 4]]);
}

#[test]
fn adjust_adds_and_removes_with_tie_rules() {
    let seqs = [seq_from_probs(&[0.5, 0.25, 0.25]), seq_from_probs(&[0.5, 0.25, 0.25])];
    let mut counts = vec![1, 1];
    assert_eq!(adjust_to_budget(&seqs, &mut counts, 3), 1);
    assert_eq!(counts, vec![2, 1]);
    let mut counts = vec![2, 2];
    assert_eq!(adjust_to_budget(&seqs, &mut counts, 3), -1);
    assert_eq!(counts, vec![2, 1]);
}

#[test]
fn uniform_split_redistributes_overflow() {
    assert_eq!(uniform_counts(&[4, 4, 4], 7), vec![3, 2, 2]);
    assert_eq!(uniform_counts(&[1, 5, 5], 9), vec![1, 4, 4]);
    assert_eq!(uniform_counts(&[0, 2], 2), vec![0, 2]);
}

#[test]
fn layer_count_mismatch() {
    let r: Vec<Vec<&[f32]>> = vec![vec![&[1.0]]];
    assert!(matches!(select_kv(&r, &[], 1), Err(SelectError::LayerCount { .. })));
}

#[test]
fn oracle_matches_on_example() {
    let scores = vec![vec![2.0, 0.5, -1.0], vec![0.3, 0.1, 0.1]];
    let a = select_from_scores(&scores, 3, DEFAULT_EPSILON).unwrap();
    assert_eq!(a.indices, oracle_select_scores(&scores, 3).unwrap());
}

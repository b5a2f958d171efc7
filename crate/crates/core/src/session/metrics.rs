use serde::{Deserialize, Serialize};

/// Exact-match comparison of detected against planted boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScore {
    pub true_positives: usize,
    pub detected: usize,
    pub planted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Both lists are sorted frame indices. Two empty lists score 1.
pub fn boundary_f1(detected: &[u64], planted: &[u64]) -> BoundaryScore {
    let tp = detected.iter().filter(|b| planted.binary_search(b).is_ok()).count();
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, detected.len());
    let recall = ratio(tp, planted.len());
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    BoundaryScore { true_positives: tp, detected: detected.len(), planted: planted.len(), precision, recall, f1 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_partial() {
        assert_eq!(boundary_f1(&[10, 20], &[10, 20]).f1, 1.0);
        assert_eq!(boundary_f1(&[], &[]).f1, 1.0);
        let s = boundary_f1(&[10, 15], &[10, 20]);
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
        assert_eq!(boundary_f1(&[3], &[]).f1, 0.0);
    }
}

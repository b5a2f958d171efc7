//! Rotary position embeddings.
//!
//! Each head's consecutive pair `(x[2k], x[2k+1])` is rotated by
//! `pos * base^(-2k / head_dim)`. Angles are formed in `f64` so large
//! positions do not lose phase precision before the `f32` rotation.

/// Precomputed cos/sin rows for positions `0..len`.
#[derive(Debug, Clone)]
pub struct RopeTable {
    cos: Vec<f32>,
    sin: Vec<f32>,
    half: usize,
    len: usize,
}

impl RopeTable {
    pub fn new(len: usize, head_dim: usize, base: f64) -> Self {
        let half = head_dim / 2;
        let inv_freq: Vec<f64> = (0..half).map(|k| base.powf(-2.0 * k as f64 / head_dim as f64)).collect();
        let mut cos = Vec::with_capacity(len * half);
        let mut sin = Vec::with_capacity(len * half);
        for pos in 0..len {
            for &f in &inv_freq {
                let (s, c) = (pos as f64 * f).sin_cos();
                cos.push(c as f32);
                sin.push(s as f32);
            }
        }
        Self { cos, sin, half, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Rotates `vec` (heads concatenated) in place to position `pos`.
    pub fn rotate(&self, vec: &mut [f32], pos: usize) {
        let head_dim = self.half * 2;
        let c = &self.cos[pos * self.half..(pos + 1) * self.half];
        let s = &self.sin[pos * self.half..(pos + 1) * self.half];
        for head in vec.chunks_exact_mut(head_dim) {
            for k in 0..self.half {
                let (x0, x1) = (head[2 * k], head[2 * k + 1]);
                head[2 * k] = x0 * c[k] - x1 * s[k];
                head[2 * k + 1] = x0 * s[k] + x1 * c[k];
            }
        }
    }
}

/// One-off rotation of `vec` (viewed as `vec.len() / head_dim` heads) to `pos`.
pub fn rope_apply(vec: &[f32], head_dim: usize, pos: usize, base: f64) -> Vec<f32> {
    let half = head_dim / 2;
    let mut out = vec.to_vec();
    for head in out.chunks_exact_mut(head_dim) {
        for k in 0..half {
            let angle = pos as f64 * base.powf(-2.0 * k as f64 / head_dim as f64);
            let (s, c) = angle.sin_cos();
            let (s, c) = (s as f32, c as f32);
            let (x0, x1) = (head[2 * k], head[2 * k + 1]);
            head[2 * k] = x0 * c - x1 * s;
            head[2 * k + 1] = x0 * s + x1 * c;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dot, norm};

    fn pseudo(n: usize, seed: u32) -> Vec<f32> {
        (0..n).map(|i| (((i as u32 + 1).wrapping_mul(2654435761) ^ seed) % 1000) as f32 / 500.0 - 1.0).collect()
    }

    #[test]
    fn position_zero_is_identity() {
        let v = pseudo(32, 1);
        assert_eq!(rope_apply(&v, 8, 0, 10000.0), v);
    }

    #[test]
    fn preserves_norm() {
        let v = pseudo(64, 2);
        let r = rope_apply(&v, 16, 777, 10000.0);
        assert!((norm(&v) - norm(&r)).abs() < 1e-4);
    }

    #[test]
    fn relative_position_property() {
        let (q, k) = (pseudo(32, 3), pseudo(32, 4));
        let base = dot(&rope_apply(&q, 16, 5, 1e4), &rope_apply(&k, 16, 2, 1e4));
        let shifted = dot(&rope_apply(&q, 16, 905, 1e4), &rope_apply(&k, 16, 902, 1e4));
        assert!((base - shifted).abs() < 1e-5, "{base} vs {shifted}");
    }

    #[test]
    fn table_matches_one_off() {
        let t = RopeTable::new(50, 8, 10000.0);
        let v = pseudo(16, 5);
        let mut w = v.clone();
        t.rotate(&mut w, 37);
        assert_eq!(w, rope_apply(&v, 8, 37, 10000.0));
    }
}

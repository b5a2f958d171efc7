//! Deterministic toy attention stack.
//!
//! Each layer is `h ← h + Attn(h W_Q, [past_K, h W_K], [past_V, h W_V]) W_O`,
//! with no MLP and no normalisation. Frames enter through a seeded input
//! projection; question and guidance tokens are already in model dimension.
//!
//! Keys are kept unrotated everywhere (blocks, window, bank). RoPE is applied
//! at attention time: during segment encoding positions are relative to the
//! oldest token in the local window, and during question answering the
//! retrieved context is renumbered `0, 1, 2, …` at patch granularity.

mod rope;
mod window;

pub use rope::{rope_apply, RopeTable};
pub use window::LocalWindow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partition::Segment;
use crate::tensor::{axpy, dot, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum AttnError {
    #[error("invalid stack config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty token list")]
    EmptyTokens,
    #[error("context for layer {layer} is not sorted by stream position")]
    UnsortedContext { layer: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub model_dim: usize,
    pub input_dim: usize,
    /// Maximum number of past token rows visible during encoding.
    pub local_window: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    pub seed: u64,
    #[serde(default = "default_causal")]
    pub causal: bool,
    /// Correlation between `W_K` and `W_Q`: `W_K = ρ·W_Q + √(1−ρ²)·G`.
    /// With independent random projections query/key cosines carry no
    /// signal, so the default ties them.
    #[serde(default = "default_coupling")]
    pub qk_coupling: f32,
    /// Weight of each layer's attention branch in the residual update
    /// `h ← h + α · Attn(·) W_O`.
    #[serde(default = "default_residual_scale")]
    pub residual_scale: f32,
}

fn default_rope_base() -> f64 {
    10000.0
}
fn default_causal() -> bool {
    true
}
fn default_coupling() -> f32 {
    1.0
}
fn default_residual_scale() -> f32 {
    0.1
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            head_dim: 16,
            model_dim: 64,
            input_dim: 32,
            local_window: 512,
            rope_base: default_rope_base(),
            seed: 0,
            causal: true,
            qk_coupling: 1.0,
            residual_scale: default_residual_scale(),
        }
    }
}

impl StackConfig {
    /// `D' = heads · head_dim`.
    pub fn kv_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<(), AttnError> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("model_dim", self.model_dim),
            ("input_dim", self.input_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(AttnError::Config(format!("{name} must be >= 1")));
        }
        if !self.head_dim.is_multiple_of(2) {
            return Err(AttnError::Config(format!("head_dim {} must be even for rotary pairing", self.head_dim)));
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            return Err(AttnError::Config(format!("rope_base {} must be positive", self.rope_base)));
        }
        if !(self.residual_scale >= 0.0 && self.residual_scale.is_finite()) {
            return Err(AttnError::Config(format!("residual_scale {} must be finite and >= 0", self.residual_scale)));
        }
        if !(0.0..=1.0).contains(&self.qk_coupling) {
            return Err(AttnError::Config(format!("qk_coupling {} outside [0, 1]", self.qk_coupling)));
        }
        Ok(())
    }
}

/// Which slot of a segment a block came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BlockSlot {
    /// Ordinal of the (post-merge) frame within its segment.
    Frame(u32),
    Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockOrigin {
    pub segment: u32,
    pub slot: BlockSlot,
}

/// Patch-level keys/values of one frame (or of the summary) at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KvBlock {
    pub origin: BlockOrigin,
    pub layer: usize,
    /// P² × D', unrotated.
    pub keys: Matrix,
    pub values: Matrix,
    /// Mean of the key rows.
    pub rep_key: Vec<f32>,
    pub stream_pos: u64,
}

impl KvBlock {
    pub fn new(origin: BlockOrigin, layer: usize, keys: Matrix, values: Matrix, stream_pos: u64) -> Self {
        let rep_key = keys.mean_rows();
        Self { origin, layer, keys, values, rep_key, stream_pos }
    }

    pub fn is_summary(&self) -> bool {
        self.origin.slot == BlockSlot::Summary
    }

    /// Bytes held by keys, values and the representative key.
    pub fn byte_size(&self) -> usize {
        (self.keys.as_slice().len() + self.values.as_slice().len() + self.rep_key.len()) * 4
    }
}

/// Output of [`AttentionStack::encode_segment`].
#[derive(Debug, Clone)]
pub struct EncodedSegment {
    pub segment: u32,
    /// Per layer, one block per frame in frame order.
    pub frame_blocks: Vec<Vec<KvBlock>>,
    /// Per layer summary block; empty when encoded without the summary token.
    pub summary_blocks: Vec<KvBlock>,
}

impl EncodedSegment {
    pub fn frames(&self) -> usize {
        self.frame_blocks.first().map_or(0, Vec::len)
    }
}

/// Result of answering over retrieved context.
#[derive(Debug, Clone, PartialEq)]
pub struct QaOutput {
    /// Final hidden state of every question token (N_q × D_m).
    pub outputs: Matrix,
    /// Mean over question tokens of the last layer's attention output
    /// restricted to context rows, mapped through `W_O`.
    pub context_readout: Vec<f32>,
    /// Keys attended per question token, summed over layers.
    pub attended_tokens: usize,
}

#[derive(Debug, Clone)]
struct LayerWeights {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
}

/// Immutable seeded weights; safe to share across threads.
#[derive(Debug, Clone)]
pub struct AttentionStack {
    config: StackConfig,
    input_proj: Matrix,
    layers: Vec<LayerWeights>,
}

impl AttentionStack {
    /// Draws all weights from a ChaCha8 stream seeded with `config.seed`, in
    /// this order: input projection (D × D_m); then per layer W_Q, G_K, W_V
    /// (D_m × D' each) and W_O (D' × D_m). Every entry is a standard normal
    /// scaled by 1/√D_m, each matrix filled row-major.
    pub fn new(config: StackConfig) -> Result<Self, AttnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = 1.0 / (config.model_dim as f64).sqrt();
        let mut draw = |rows: usize, cols: usize| {
            let data = (0..rows * cols)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * scale) as f32
                })
                .collect();
            Matrix::from_vec(rows, cols, data).unwrap()
        };
        let (dm, kv) = (config.model_dim, config.kv_dim());
        let input_proj = draw(config.input_dim, dm);
        let rho = config.qk_coupling;
        let sigma = (1.0 - rho * rho).max(0.0).sqrt();
        let layers = (0..config.layers)
            .map(|_| {
                let wq = draw(dm, kv);
                let g = draw(dm, kv);
                let wv = draw(dm, kv);
                let wo = draw(kv, dm);
                let wk_data = wq.as_slice().iter().zip(g.as_slice()).map(|(&q, &n)| rho * q + sigma * n).collect();
                let wk = Matrix::from_vec(dm, kv, wk_data).unwrap();
                LayerWeights { wq, wk, wv, wo }
            })
            .collect();
        Ok(Self { config, input_proj, layers })
    }

    pub fn config(&self) -> &StackConfig {
        &self.config
    }

    pub fn new_window(&self) -> LocalWindow {
        LocalWindow::new(self.config.layers, self.config.local_window, self.config.kv_dim())
    }

    pub fn input_projection(&self) -> &Matrix {
        &self.input_proj
    }

    /// W_Q of `layer`, for inspection and tests.
    pub fn query_weights(&self, layer: usize) -> &Matrix {
        &self.layers[layer].wq
    }

    /// Maps P²×D patch rows into model dimension.
    pub fn project_input(&self, patches: &Matrix) -> Result<Matrix, AttnError> {
        if patches.cols() != self.config.input_dim {
            return Err(AttnError::Dimension(format!(
                "input has {} columns, stack expects {}",
                patches.cols(),
                self.config.input_dim
            )));
        }
        Ok(patches.matmul(&self.input_proj))
    }

    /// The final-layer value/output map applied to the mean projected row of
    /// `patches`; the reference a context readout is compared against.
    pub fn reference_response(&self, patches: &Matrix) -> Result<Vec<f32>, AttnError> {
        let projected = self.project_input(patches)?;
        let mean = Matrix::from_vec(1, self.config.model_dim, projected.mean_rows()).unwrap();
        let last = self.layers.last().unwrap();
        Ok(mean.matmul(&last.wv).matmul(&last.wo).into_vec())
    }

    /// Encodes `[segment frames ∥ summary]` through every layer, attending to
    /// the local window, and appends the new tokens' KV to the window.
    pub fn encode_segment(
        &self,
        window: &mut LocalWindow,
        segment: &Segment,
        with_summary: bool,
    ) -> Result<EncodedSegment, AttnError> {
        let cfg = &self.config;
        if segment.frames.is_empty() {
            return Err(AttnError::Dimension("segment has no frames".into()));
        }
        if window.num_layers() != cfg.layers || window.kv_dim() != cfg.kv_dim() {
            return Err(AttnError::Dimension("local window does not match the stack".into()));
        }
        let patches = segment.frames[0].patches.rows();
        let mut rows: Vec<&[f32]> = Vec::new();
        let mut stream_pos: Vec<u64> = Vec::new();
        for f in &segment.frames {
            if f.patches.rows() != patches || f.patches.cols() != cfg.input_dim {
                return Err(AttnError::Dimension(format!(
                    "frame {} is {}x{}, expected {}x{}",
                    f.index,
                    f.patches.rows(),
                    f.patches.cols(),
                    patches,
                    cfg.input_dim
                )));
            }
            rows.extend(f.patches.row_iter());
            stream_pos.extend(std::iter::repeat_n(f.index, patches));
        }
        if with_summary {
            if segment.summary.rows() != patches || segment.summary.cols() != cfg.input_dim {
                return Err(AttnError::Dimension("summary shape differs from frames".into()));
            }
            rows.extend(segment.summary.row_iter());
            stream_pos.extend(std::iter::repeat_n(segment.last_frame, patches));
        }
        let x = Matrix::from_vec(rows.len(), cfg.input_dim, rows.concat()).unwrap();
        let mut h = x.matmul(&self.input_proj);
        let n = h.rows();

        let mut frame_blocks = Vec::with_capacity(cfg.layers);
        let mut summary_blocks = Vec::with_capacity(cfg.layers);
        for (l, w) in self.layers.iter().enumerate() {
            let q = h.matmul(&w.wq);
            let k = h.matmul(&w.wk);
            let v = h.matmul(&w.wv);

            let past = window.len(l);
            let table = RopeTable::new(past + n, cfg.head_dim, cfg.rope_base);
            let mut keys = Matrix::zeros(past + n, cfg.kv_dim());
            let mut values = Matrix::zeros(past + n, cfg.kv_dim());
            for (j, (pk, pv)) in window.keys(l).zip(window.values(l)).enumerate() {
                keys.row_mut(j).copy_from_slice(pk);
                values.row_mut(j).copy_from_slice(pv);
            }
            for i in 0..n {
                keys.row_mut(past + i).copy_from_slice(k.row(i));
                values.row_mut(past + i).copy_from_slice(v.row(i));
            }
            for j in 0..past + n {
                table.rotate(keys.row_mut(j), j);
            }
            let mut q_rot = q;
            for i in 0..n {
                table.rotate(q_rot.row_mut(i), past + i);
            }
            let causal = cfg.causal;
            let (out, _) =
                attend(&q_rot, &keys, &values, cfg.head_dim, |i| if causal { past + i + 1 } else { past + n }, None);
            h.add_scaled(&out.matmul(&w.wo), cfg.residual_scale);

            let mut blocks = Vec::with_capacity(segment.frames.len());
            for (t, f) in segment.frames.iter().enumerate() {
                let origin = BlockOrigin { segment: segment.id, slot: BlockSlot::Frame(t as u32) };
                let r = t * patches..(t + 1) * patches;
                blocks.push(KvBlock::new(
                    origin,
                    l,
                    k.slice_rows(r.start, r.end),
                    v.slice_rows(r.start, r.end),
                    f.index,
                ));
            }
            frame_blocks.push(blocks);
            if with_summary {
                let start = segment.frames.len() * patches;
                let origin = BlockOrigin { segment: segment.id, slot: BlockSlot::Summary };
                summary_blocks.push(KvBlock::new(
                    origin,
                    l,
                    k.slice_rows(start, n),
                    v.slice_rows(start, n),
                    segment.last_frame,
                ));
            }
            for (i, &pos) in stream_pos.iter().enumerate().take(n) {
                window.push(l, k.row(i), v.row(i), pos);
            }
        }
        Ok(EncodedSegment { segment: segment.id, frame_blocks, summary_blocks })
    }

    fn token_matrix(&self, tokens: &[Vec<f32>]) -> Result<Matrix, AttnError> {
        if tokens.is_empty() {
            return Err(AttnError::EmptyTokens);
        }
        if let Some(t) = tokens.iter().find(|t| t.len() != self.config.model_dim) {
            return Err(AttnError::Dimension(format!(
                "token has dimension {}, model dimension is {}",
                t.len(),
                self.config.model_dim
            )));
        }
        Ok(Matrix::from_rows(tokens).unwrap())
    }

    /// Per-layer mean of the (unrotated) query vectors of `tokens`, run
    /// through the stack attending only to each other.
    pub fn criterion_from_tokens(&self, tokens: &[Vec<f32>]) -> Result<Vec<Vec<f32>>, AttnError> {
        let cfg = &self.config;
        let mut h = self.token_matrix(tokens)?;
        let n = h.rows();
        let table = RopeTable::new(n, cfg.head_dim, cfg.rope_base);
        let mut criteria = Vec::with_capacity(cfg.layers);
        for w in &self.layers {
            let q = h.matmul(&w.wq);
            criteria.push(q.mean_rows());
            let mut k = h.matmul(&w.wk);
            let v = h.matmul(&w.wv);
            let mut q_rot = q;
            for i in 0..n {
                table.rotate(q_rot.row_mut(i), i);
                table.rotate(k.row_mut(i), i);
            }
            let causal = cfg.causal;
            let (out, _) = attend(&q_rot, &k, &v, cfg.head_dim, |i| if causal { i + 1 } else { n }, None);
            h.add_scaled(&out.matmul(&w.wo), cfg.residual_scale);
        }
        Ok(criteria)
    }

    /// Answers over retrieved per-layer context. Context rows take positions
    /// `0..C` in order; question tokens continue from `C`.
    pub fn qa_attend(&self, context: &[Vec<&KvBlock>], tokens: &[Vec<f32>]) -> Result<QaOutput, AttnError> {
        let cfg = &self.config;
        if context.len() != cfg.layers {
            return Err(AttnError::Dimension(format!(
                "context has {} layers, stack has {}",
                context.len(),
                cfg.layers
            )));
        }
        for (l, blocks) in context.iter().enumerate() {
            if blocks.windows(2).any(|w| w[0].stream_pos > w[1].stream_pos) {
                return Err(AttnError::UnsortedContext { layer: l });
            }
            if blocks.iter().any(|b| b.keys.cols() != cfg.kv_dim() || b.values.cols() != cfg.kv_dim()) {
                return Err(AttnError::Dimension(format!("layer {l} context blocks have the wrong width")));
            }
        }
        let mut h = self.token_matrix(tokens)?;
        let n = h.rows();
        let mut attended = 0;
        let mut readout = vec![0.0f32; cfg.model_dim];
        for (l, w) in self.layers.iter().enumerate() {
            let ctx_rows: usize = context[l].iter().map(|b| b.keys.rows()).sum();
            let total = ctx_rows + n;
            let table = RopeTable::new(total, cfg.head_dim, cfg.rope_base);
            let q = h.matmul(&w.wq);
            let k = h.matmul(&w.wk);
            let v = h.matmul(&w.wv);

            let mut keys = Matrix::zeros(total, cfg.kv_dim());
            let mut values = Matrix::zeros(total, cfg.kv_dim());
            let mut r = 0;
            for b in &context[l] {
                for (kr, vr) in b.keys.row_iter().zip(b.values.row_iter()) {
                    keys.row_mut(r).copy_from_slice(kr);
                    values.row_mut(r).copy_from_slice(vr);
                    r += 1;
                }
            }
            for i in 0..n {
                keys.row_mut(ctx_rows + i).copy_from_slice(k.row(i));
                values.row_mut(ctx_rows + i).copy_from_slice(v.row(i));
            }
            for j in 0..total {
                table.rotate(keys.row_mut(j), j);
            }
            let mut q_rot = q;
            for i in 0..n {
                table.rotate(q_rot.row_mut(i), ctx_rows + i);
            }
            let causal = cfg.causal;
            let last = l + 1 == cfg.layers;
            let (out, ctx_part) = attend(
                &q_rot,
                &keys,
                &values,
                cfg.head_dim,
                |i| if causal { ctx_rows + i + 1 } else { total },
                last.then_some(ctx_rows),
            );
            attended += (0..n).map(|i| if causal { ctx_rows + i + 1 } else { total }).sum::<usize>();
            if let Some(part) = ctx_part {
                readout = part.matmul(&w.wo).mean_rows();
            }
            h.add_scaled(&out.matmul(&w.wo), cfg.residual_scale);
        }
        Ok(QaOutput { outputs: h, context_readout: readout, attended_tokens: attended })
    }
}

/// Scaled dot-product attention over heads packed along the columns.
/// Query `i` sees keys `0..visible(i)`. With `split = Some(c)` the share of
/// the output contributed by keys `0..c` is returned as well.
fn attend(
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
    head_dim: usize,
    visible: impl Fn(usize) -> usize,
    split: Option<usize>,
) -> (Matrix, Option<Matrix>) {
    let width = queries.cols();
    let heads = width / head_dim;
    let scale = 1.0 / (head_dim as f32).sqrt();
    let mut out = Matrix::zeros(queries.rows(), width);
    let mut part = split.map(|_| Matrix::zeros(queries.rows(), width));
    let mut logits = Vec::with_capacity(keys.rows());
    for i in 0..queries.rows() {
        let vis = visible(i).min(keys.rows());
        let qrow = queries.row(i);
        for hd in 0..heads {
            let cols = hd * head_dim..(hd + 1) * head_dim;
            let qh = &qrow[cols.clone()];
            logits.clear();
            let mut max = f32::NEG_INFINITY;
            for j in 0..vis {
                let s = dot(qh, &keys.row(j)[cols.clone()]) * scale;
                max = max.max(s);
                logits.push(s);
            }
            let mut sum = 0.0f32;
            for s in logits.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            let inv = 1.0 / sum;
            let o = &mut out.row_mut(i)[cols.clone()];
            for (j, &wgt) in logits.iter().enumerate() {
                axpy(wgt * inv, &values.row(j)[cols.clone()], o);
            }
            if let (Some(p), Some(c)) = (part.as_mut(), split) {
                let o = &mut p.row_mut(i)[cols.clone()];
                for (j, &wgt) in logits.iter().enumerate().take(c.min(vis)) {
                    axpy(wgt * inv, &values.row(j)[cols.clone()], o);
                }
            }
        }
    }
    (out, part)
}

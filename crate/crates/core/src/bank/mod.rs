//! Per-layer store of compressed KV blocks.
//!
//! Each segment is compressed once on arrival: its frame blocks compete for
//! a budget of `⌈(1−θ)·T⌉ × L` slots across all layers, the survivors are
//! appended in temporal order and the segment's summary block follows them
//! uncompressed. Questions retrieve from every stored block, summaries
//! included.

mod spill;

pub use spill::{load_spill, SpillWriter, SPILL_MAGIC, SPILL_VERSION};

use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attn::{EncodedSegment, KvBlock};
use crate::select::{Allocation, BudgetAllocation, SelectError};

#[derive(Debug, Error)]
pub enum BankError {
    #[error("segment has {got} layers, bank has {expected}")]
    LayerMismatch { expected: usize, got: usize },
    #[error("compression ratio {0} outside [0, 1)")]
    Ratio(f64),
    #[error("block shape {got:?} does not match bank shape {expected:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error("spill file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Frame blocks kept per layer on average for a segment of `frames` frames,
/// `⌈(1−θ)·T⌉`. A tiny tolerance stops products such as `(1−0.7)·10`
/// rounding up past an exact integer.
pub fn retained_per_layer(ratio: f64, frames: usize) -> usize {
    ((1.0 - ratio) * frames as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Compression settings applied to every appended segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub ratio: f64,
    /// Per-layer guidance criterion.
    pub criteria: Vec<Vec<f32>>,
    pub allocation: Allocation,
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<(), BankError> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(BankError::Ratio(self.ratio));
        }
        Ok(())
    }
}

/// One layer's retained blocks and their representative keys, index-aligned.
#[derive(Debug, Clone, Default)]
pub struct LayerBank {
    pub layer: usize,
    blocks: Vec<KvBlock>,
    rep_keys: Vec<Vec<f32>>,
}

impl LayerBank {
    pub fn blocks(&self) -> &[KvBlock] {
        &self.blocks
    }

    pub fn rep_keys(&self) -> &[Vec<f32>] {
        &self.rep_keys
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    fn push(&mut self, block: KvBlock) {
        self.rep_keys.push(block.rep_key.clone());
        self.blocks.push(block);
    }
}

/// Per-segment retention record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment: u32,
    pub frames: usize,
    /// Frame blocks kept, summed over layers.
    pub retained: usize,
    /// Frame blocks discarded, summed over layers.
    pub dropped: usize,
}

/// What one append kept.
#[derive(Debug, Clone, PartialEq)]
pub struct AppendOutcome {
    /// Retained frame ordinals per layer, temporal order.
    pub retained: Vec<Vec<usize>>,
    pub allocation: BudgetAllocation,
    /// Retained normalised guidance mass across layers.
    pub retained_mass: f64,
}

/// Blocks chosen for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    /// Bank positions per layer, temporal order.
    pub indices: Vec<Vec<usize>>,
    pub blocks: Vec<Vec<KvBlock>>,
    pub allocation: Option<BudgetAllocation>,
    /// Set when the bank had nothing to retrieve.
    pub empty_bank: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer: usize,
    pub blocks: usize,
    pub frame_blocks: usize,
    pub summary_blocks: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankStats {
    pub patch_count: usize,
    pub kv_dim: usize,
    pub layers: Vec<LayerStats>,
    pub total_blocks: usize,
    pub total_bytes: usize,
    pub segments: Vec<SegmentRecord>,
}

impl BankStats {
    /// `blocks × (P² × D' × 2 + D') × 4` bytes.
    pub fn estimate_bytes(blocks: usize, patch_count: usize, kv_dim: usize) -> usize {
        blocks * (patch_count * kv_dim * 2 + kv_dim) * 4
    }
}

/// The per-layer bank plus bookkeeping.
#[derive(Debug)]
pub struct KvBank {
    patch_count: usize,
    kv_dim: usize,
    layers: Vec<LayerBank>,
    segments: Vec<SegmentRecord>,
    spill: Option<SpillWriter>,
}

impl KvBank {
    pub fn new(layers: usize, patch_count: usize, kv_dim: usize) -> Self {
        Self {
            patch_count,
            kv_dim,
            layers: (0..layers).map(|layer| LayerBank { layer, ..LayerBank::default() }).collect(),
            segments: Vec::new(),
            spill: None,
        }
    }

    /// Mirrors every subsequent append to `writer`.
    pub fn with_spill(mut self, writer: SpillWriter) -> Self {
        self.spill = Some(writer);
        self
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn patch_count(&self) -> usize {
        self.patch_count
    }

    pub fn kv_dim(&self) -> usize {
        self.kv_dim
    }

    pub fn layer(&self, l: usize) -> &LayerBank {
        &self.layers[l]
    }

    pub fn layers(&self) -> &[LayerBank] {
        &self.layers
    }

    pub fn segments(&self) -> &[SegmentRecord] {
        &self.segments
    }

    pub fn total_blocks(&self) -> usize {
        self.layers.iter().map(LayerBank::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_blocks() == 0
    }

    fn check_block(&self, b: &KvBlock) -> Result<(), BankError> {
        let expected = (self.patch_count, self.kv_dim);
        for got in [(b.keys.rows(), b.keys.cols()), (b.values.rows(), b.values.cols())] {
            if got != expected {
                return Err(BankError::Shape { expected, got });
            }
        }
        Ok(())
    }

    /// Compresses one encoded segment under `config` and appends the result.
    pub fn compress_and_append(
        &mut self,
        encoded: EncodedSegment,
        config: &CompressionConfig,
    ) -> Result<AppendOutcome, BankError> {
        config.validate()?;
        let layers = self.layers.len();
        if encoded.frame_blocks.len() != layers {
            return Err(BankError::LayerMismatch { expected: layers, got: encoded.frame_blocks.len() });
        }
        if !encoded.summary_blocks.is_empty() && encoded.summary_blocks.len() != layers {
            return Err(BankError::LayerMismatch { expected: layers, got: encoded.summary_blocks.len() });
        }
        for b in encoded.frame_blocks.iter().flatten().chain(&encoded.summary_blocks) {
            self.check_block(b)?;
        }
        let frames = encoded.frames();
        let budget = retained_per_layer(config.ratio, frames) * layers;
        let ranges: Vec<Vec<&[f32]>> =
            encoded.frame_blocks.iter().map(|l| l.iter().map(|b| b.rep_key.as_slice()).collect()).collect();
        let selection = config.allocation.select(&ranges, &config.criteria, budget)?;
        let retained_mass = selection.retained_mass();

        let mut summaries = encoded.summary_blocks.into_iter();
        let mut appended: Vec<Vec<KvBlock>> = Vec::with_capacity(layers);
        for (blocks, keep) in encoded.frame_blocks.into_iter().zip(&selection.indices) {
            let mut kept: Vec<KvBlock> = Vec::with_capacity(keep.len() + 1);
            let mut wanted = keep.iter().peekable();
            for (i, b) in blocks.into_iter().enumerate() {
                if wanted.peek() == Some(&&i) {
                    wanted.next();
                    kept.push(b);
                }
            }
            kept.extend(summaries.next());
            appended.push(kept);
        }

        if let Some(w) = self.spill.as_mut() {
            w.append_segment(encoded.segment, frames, &appended)?;
        }
        for (layer, blocks) in self.layers.iter_mut().zip(appended) {
            for b in blocks {
                layer.push(b);
            }
        }
        let retained = selection.allocation.total();
        self.segments.push(SegmentRecord {
            segment: encoded.segment,
            frames,
            retained,
            dropped: frames * layers - retained,
        });
        Ok(AppendOutcome { retained: selection.indices, allocation: selection.allocation, retained_mass })
    }

    /// Selects `min(n_r × L, bank size)` blocks across layers for `criteria`.
    pub fn retrieve(&self, criteria: &[Vec<f32>], n_r: usize, allocation: Allocation) -> Result<Retrieval, BankError> {
        let layers = self.layers.len();
        if self.is_empty() {
            return Ok(Retrieval {
                indices: vec![Vec::new(); layers],
                blocks: vec![Vec::new(); layers],
                allocation: None,
                empty_bank: true,
            });
        }
        let budget = (n_r * layers).min(self.total_blocks());
        let ranges: Vec<Vec<&[f32]>> =
            self.layers.iter().map(|l| l.rep_keys.iter().map(Vec::as_slice).collect()).collect();
        let selection = allocation.select(&ranges, criteria, budget)?;
        let blocks = selection
            .indices
            .iter()
            .zip(&self.layers)
            .map(|(ids, l)| ids.iter().map(|&i| l.blocks[i].clone()).collect())
            .collect();
        Ok(Retrieval { indices: selection.indices, blocks, allocation: Some(selection.allocation), empty_bank: false })
    }

    /// Counts and byte estimates.
    pub fn stats(&self) -> BankStats {
        let layers: Vec<LayerStats> = self
            .layers
            .iter()
            .map(|l| {
                let summary_blocks = l.blocks.iter().filter(|b| b.is_summary()).count();
                LayerStats {
                    layer: l.layer,
                    blocks: l.len(),
                    frame_blocks: l.len() - summary_blocks,
                    summary_blocks,
                    bytes: BankStats::estimate_bytes(l.len(), self.patch_count, self.kv_dim),
                }
            })
            .collect();
        BankStats {
            patch_count: self.patch_count,
            kv_dim: self.kv_dim,
            total_blocks: layers.iter().map(|l| l.blocks).sum(),
            total_bytes: layers.iter().map(|l| l.bytes).sum(),
            layers,
            segments: self.segments.clone(),
        }
    }

    /// Bytes actually held in block and representative-key buffers.
    pub fn resident_bytes(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let kv: usize = l.blocks.iter().map(|b| b.keys.as_slice().len() + b.values.as_slice().len()).sum();
                let reps: usize = l.rep_keys.iter().map(Vec::len).sum();
                (kv + reps) * 4
            })
            .sum()
    }

    /// Flushes the spill writer, if any.
    pub fn flush(&mut self) -> Result<(), BankError> {
        if let Some(w) = self.spill.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

/// A bank shared between one writer and many readers. Each append holds the
/// write lock for the whole segment, so readers see it entirely or not at all.
#[derive(Debug, Clone)]
pub struct SharedBank {
    inner: Arc<RwLock<KvBank>>,
}

impl SharedBank {
    pub fn new(bank: KvBank) -> Self {
        Self { inner: Arc::new(RwLock::new(bank)) }
    }

    pub fn compress_and_append(
        &self,
        encoded: EncodedSegment,
        config: &CompressionConfig,
    ) -> Result<AppendOutcome, BankError> {
        self.inner.write().expect("bank lock poisoned").compress_and_append(encoded, config)
    }

    pub fn retrieve(&self, criteria: &[Vec<f32>], n_r: usize, allocation: Allocation) -> Result<Retrieval, BankError> {
        self.inner.read().expect("bank lock poisoned").retrieve(criteria, n_r, allocation)
    }

    pub fn stats(&self) -> BankStats {
        self.inner.read().expect("bank lock poisoned").stats()
    }

    /// Runs `f` against a consistent snapshot.
    pub fn read<T>(&self, f: impl FnOnce(&KvBank) -> T) -> T {
        f(&self.inner.read().expect("bank lock poisoned"))
    }

    pub fn flush(&self) -> Result<(), BankError> {
        self.inner.write().expect("bank lock poisoned").flush()
    }

    /// Returns the bank if this is the last handle.
    pub fn into_inner(self) -> Option<KvBank> {
        Arc::try_unwrap(self.inner).ok().map(|l| l.into_inner().expect("bank lock poisoned"))
    }
}

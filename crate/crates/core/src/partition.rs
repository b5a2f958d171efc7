//! Semantic segmentation of a frame stream.
//!
//! Boundaries are placed where adjacent-frame cosine similarity drops below
//! `threshold`, but only once the open segment holds at least `min_len`
//! frames (the exclusion window). When the open segment grows past
//! `max_len`, the most similar adjacent pair is merged into its mean, so the
//! working buffer never holds more than `max_len` frames.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream::FrameEmbedding;
use crate::tensor::{cosine, mean_of, pair_mean, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("degenerate input: frame {0} has zero norm")]
    Degenerate(u64),
    #[error("frame {index} is {got:?}, expected {expected:?}")]
    Dimension { index: u64, got: (usize, usize), expected: (usize, usize) },
    #[error("invalid partition config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub threshold: f64,
    pub min_len: usize,
    pub max_len: usize,
    #[serde(default = "yes")]
    pub merge_enabled: bool,
}

fn yes() -> bool {
    true
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { threshold: 0.99, min_len: 4, max_len: 64, merge_enabled: true }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<(), PartitionError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(PartitionError::Config(format!("threshold {} outside (0, 1]", self.threshold)));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(PartitionError::Config(format!(
                "need 1 <= min_len <= max_len, got {} and {}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// A run of frames emitted by the partitioner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: u32,
    /// Original stream positions covered, inclusive.
    pub first_frame: u64,
    pub last_frame: u64,
    /// Post-merge frames, `T_i` of them.
    pub frames: Vec<FrameEmbedding>,
    pub summary: Matrix,
    /// Stream indices of each merged adjacent pair, in merge order.
    pub merge_log: Vec<(u64, u64)>,
    /// Set on a trailing segment shorter than the minimum length.
    pub short: bool,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Cosine similarity of two frames, flattened.
pub fn frame_similarity(prev: &FrameEmbedding, cur: &FrameEmbedding) -> Result<f64, PartitionError> {
    cosine(prev.patches.as_slice(), cur.patches.as_slice()).ok_or_else(|| {
        let culprit = if prev.patches.as_slice().iter().all(|&x| x == 0.0) { prev.index } else { cur.index };
        PartitionError::Degenerate(culprit)
    })
}

/// Elementwise mean of the frames.
pub fn summarize(frames: &[FrameEmbedding]) -> Matrix {
    assert!(!frames.is_empty(), "summarize needs at least one frame");
    let mats: Vec<&Matrix> = frames.iter().map(|f| &f.patches).collect();
    mean_of(&mats)
}

fn pair_sim(a: &FrameEmbedding, b: &FrameEmbedding) -> f64 {
    // zero-norm pairs never win a merge
    cosine(a.patches.as_slice(), b.patches.as_slice()).unwrap_or(f64::NEG_INFINITY)
}

/// Merges the most similar adjacent pair once. `sims[j]` is the similarity of
/// `frames[j]` and `frames[j + 1]` and is kept in sync.
fn merge_once(frames: &mut Vec<FrameEmbedding>, sims: &mut Vec<f64>) -> (u64, u64) {
    debug_assert_eq!(sims.len() + 1, frames.len());
    let mut best = 0;
    for (j, &s) in sims.iter().enumerate().skip(1) {
        if s > sims[best] {
            best = j;
        }
    }
    let right = frames.remove(best + 1);
    let left = &mut frames[best];
    let logged = (left.index, right.index);
    left.patches = pair_mean(&left.patches, &right.patches);
    sims.remove(best);
    if best > 0 {
        sims[best - 1] = pair_sim(&frames[best - 1], &frames[best]);
    }
    if best < sims.len() {
        sims[best] = pair_sim(&frames[best], &frames[best + 1]);
    }
    logged
}

/// Repeatedly merges the most similar adjacent pair (ties toward the earlier
/// pair) until at most `max_len` frames remain. Returns the merged list and the
/// merge log.
pub fn merge_to_max(mut frames: Vec<FrameEmbedding>, max_len: usize) -> (Vec<FrameEmbedding>, Vec<(u64, u64)>) {
    let max_len = max_len.max(1);
    let mut sims: Vec<f64> = frames.windows(2).map(|w| pair_sim(&w[0], &w[1])).collect();
    let mut log = Vec::new();
    while frames.len() > max_len {
        log.push(merge_once(&mut frames, &mut sims));
    }
    (frames, log)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Semantic(PartitionConfig),
    /// Fixed-length chunks, ignoring content.
    Uniform(usize),
}

/// Streaming partitioner state. One stream per instance.
#[derive(Debug, Clone)]
pub struct Partitioner {
    mode: Mode,
    buffer: Vec<FrameEmbedding>,
    sims: Vec<f64>,
    merge_log: Vec<(u64, u64)>,
    prev: Option<FrameEmbedding>,
    open_last: u64,
    dims: Option<(usize, usize)>,
    next_id: u32,
}

impl Partitioner {
    pub fn new(config: PartitionConfig) -> Result<Self, PartitionError> {
        config.validate()?;
        Ok(Self::with_mode(Mode::Semantic(config)))
    }

    /// Content-blind partitioner that cuts every `chunk_len` frames.
    pub fn uniform(chunk_len: usize) -> Result<Self, PartitionError> {
        if chunk_len == 0 {
            return Err(PartitionError::Config("uniform chunk length must be >= 1".into()));
        }
        Ok(Self::with_mode(Mode::Uniform(chunk_len)))
    }

    fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            buffer: Vec::new(),
            sims: Vec::new(),
            merge_log: Vec::new(),
            prev: None,
            open_last: 0,
            dims: None,
            next_id: 0,
        }
    }

    /// Frames currently held in the open segment.
    pub fn open_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn segments_emitted(&self) -> u32 {
        self.next_id
    }

    fn emit(&mut self, short: bool) -> Segment {
        let frames = std::mem::take(&mut self.buffer);
        self.sims.clear();
        let summary = summarize(&frames);
        let seg = Segment {
            id: self.next_id,
            first_frame: frames[0].index,
            last_frame: self.open_last,
            frames,
            summary,
            merge_log: std::mem::take(&mut self.merge_log),
            short,
        };
        self.next_id += 1;
        seg
    }

    /// Feeds the next frame. Returns the segment closed by this frame, if any.
    pub fn push_frame(&mut self, frame: FrameEmbedding) -> Result<Option<Segment>, PartitionError> {
        let shape = (frame.patches.rows(), frame.patches.cols());
        match self.dims {
            Some(expected) if expected != shape => {
                return Err(PartitionError::Dimension { index: frame.index, got: shape, expected })
            }
            None => self.dims = Some(shape),
            _ => {}
        }

        let emitted = match self.mode {
            Mode::Uniform(chunk) => {
                let out = (self.buffer.len() >= chunk).then(|| self.emit(false));
                self.buffer.push(frame.clone());
                out
            }
            Mode::Semantic(cfg) => {
                let sim = match &self.prev {
                    Some(prev) => Some(frame_similarity(prev, &frame)?),
                    None => None,
                };
                match sim {
                    Some(s) if s < cfg.threshold && self.buffer.len() >= cfg.min_len => {
                        let seg = self.emit(false);
                        self.buffer.push(frame.clone());
                        Some(seg)
                    }
                    _ => {
                        if let Some(s) = sim.filter(|_| !self.buffer.is_empty()) {
                            self.sims.push(s);
                        }
                        self.buffer.push(frame.clone());
                        if cfg.merge_enabled && self.buffer.len() > cfg.max_len {
                            let logged = merge_once(&mut self.buffer, &mut self.sims);
                            self.merge_log.push(logged);
                        }
                        None
                    }
                }
            }
        };
        self.open_last = frame.index;
        self.prev = Some(frame);
        Ok(emitted)
    }

    /// Flushes the open segment at end of stream. A segment shorter than the
    /// minimum is still emitted, with `short` set.
    pub fn finalize(&mut self) -> Option<Segment> {
        if self.buffer.is_empty() {
            return None;
        }
        let min = match self.mode {
            Mode::Semantic(cfg) => cfg.min_len,
            Mode::Uniform(chunk) => chunk,
        };
        let short = self.buffer.len() < min;
        Some(self.emit(short))
    }
}

/// Runs a whole frame sequence through a partitioner.
pub fn partition_all<I>(mut partitioner: Partitioner, frames: I) -> Result<Vec<Segment>, PartitionError>
where
    I: IntoIterator<Item = FrameEmbedding>,
{
    let mut out = Vec::new();
    for f in frames {
        out.extend(partitioner.push_frame(f)?);
    }
    out.extend(partitioner.finalize());
    Ok(out)
}

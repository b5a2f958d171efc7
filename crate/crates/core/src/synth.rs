//! Seeded synthetic embedding streams with planted segment structure.
//!
//! Each planted segment owns a unit cluster direction (a P²×D matrix of
//! Frobenius norm 1). Frames are `direction + noise`, where the noise has
//! expected Frobenius norm `noise_scale`. Directions are derived from their
//! own seeds and then Gram–Schmidt orthogonalised against every earlier
//! distinct direction, so consecutive planted segments are orthogonal and
//! the cross-boundary similarity is governed by noise alone.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream::{FrameEmbedding, StreamHeader};
use crate::tensor::{cosine, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error(
        "boundary before frame {frame} has similarity {similarity:.4} > boundary_drop {target:.4}; lower noise_scale"
    )]
    BoundaryNotAchieved { frame: u64, similarity: f64, target: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSegment {
    pub length: usize,
    pub direction_seed: u64,
    pub noise_scale: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    #[serde(default = "default_patch_count")]
    pub patch_count: u32,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: u32,
    pub segments: Vec<PlantedSegment>,
    /// Upper bound on adjacent-frame similarity across a planted boundary.
    pub boundary_drop: f64,
    /// Partitioner minimum segment length the planted lengths must respect.
    #[serde(default = "default_min_len")]
    pub min_len: usize,
}

fn default_patch_count() -> u32 {
    4
}
fn default_embed_dim() -> u32 {
    32
}
fn default_min_len() -> usize {
    4
}

impl SyntheticSpec {
    /// Spec with one planted segment per entry of `lengths`, each with its own
    /// direction and a shared noise level.
    pub fn planted(seed: u64, lengths: &[usize], noise_scale: f32) -> Self {
        let segments = lengths
            .iter()
            .enumerate()
            .map(|(i, &length)| PlantedSegment {
                length,
                direction_seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1),
                noise_scale,
            })
            .collect();
        Self {
            seed,
            patch_count: default_patch_count(),
            embed_dim: default_embed_dim(),
            segments,
            boundary_drop: 0.2,
            min_len: default_min_len(),
        }
    }

    pub fn with_dims(mut self, patch_count: u32, embed_dim: u32) -> Self {
        self.patch_count = patch_count;
        self.embed_dim = embed_dim;
        self
    }

    pub fn total_frames(&self) -> usize {
        self.segments.iter().map(|s| s.length).sum()
    }

    pub fn header(&self) -> StreamHeader {
        StreamHeader::new(self.patch_count, self.embed_dim)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.patch_count == 0 || self.embed_dim == 0 {
            return Err(SynthError::Invalid("patch_count and embed_dim must be >= 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.boundary_drop) {
            return Err(SynthError::Invalid(format!("boundary_drop {} outside [-1, 1]", self.boundary_drop)));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.length < self.min_len.max(1) {
                return Err(SynthError::Invalid(format!(
                    "segment {i} has length {} < minimum {}",
                    s.length,
                    self.min_len.max(1)
                )));
            }
            if !(s.noise_scale >= 0.0 && s.noise_scale.is_finite()) {
                return Err(SynthError::Invalid(format!("segment {i} has invalid noise_scale {}", s.noise_scale)));
            }
        }
        Ok(())
    }
}

/// Frame range `[first_frame, last_frame]` of one planted segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedRange {
    pub first_frame: u64,
    pub last_frame: u64,
    /// Index into [`GroundTruth::directions`].
    pub direction: usize,
}

impl PlantedRange {
    pub fn contains(&self, frame: u64) -> bool {
        (self.first_frame..=self.last_frame).contains(&frame)
    }

    pub fn len(&self) -> u64 {
        self.last_frame - self.first_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// What the generator planted: segment ranges and their unit directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GroundTruth {
    pub segments: Vec<PlantedRange>,
    pub directions: Vec<Matrix>,
}

impl GroundTruth {
    pub fn segment_of(&self, frame: u64) -> Option<usize> {
        let idx = self.segments.partition_point(|s| s.last_frame < frame);
        self.segments.get(idx).filter(|s| s.contains(frame)).map(|_| idx)
    }

    /// Frame indices where a new direction starts (the first frame of each
    /// planted segment after the first, skipping repeats of the same direction).
    pub fn boundaries(&self) -> Vec<u64> {
        self.segments.windows(2).filter(|w| w[0].direction != w[1].direction).map(|w| w[1].first_frame).collect()
    }

    pub fn direction_of_segment(&self, segment: usize) -> &Matrix {
        &self.directions[self.segments[segment].direction]
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticStream {
    pub header: StreamHeader,
    pub frames: Vec<FrameEmbedding>,
    pub truth: GroundTruth,
}

fn unit_direction(seed: u64, len: usize, earlier: &[Matrix]) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();

    // Orthogonalise against the most recent directions that still fit in the space.
    let keep = earlier.len().min(len.saturating_sub(1));
    let mut v = raw.clone();
    for d in &earlier[earlier.len() - keep..] {
        let d = d.as_slice();
        let proj: f64 = v.iter().zip(d).map(|(a, &b)| a * f64::from(b)).sum();
        for (a, &b) in v.iter_mut().zip(d) {
            *a -= proj * f64::from(b);
        }
    }
    let mut n: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n < 1e-6 {
        v = raw;
        n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    }
    v.iter().map(|a| (a / n) as f32).collect()
}

/// Generates the planted stream described by `spec`. Pure function of the spec.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticStream, SynthError> {
    spec.validate()?;
    let header = spec.header();
    let (p, d) = (spec.patch_count as usize, spec.embed_dim as usize);
    let len = p * d;
    let inv_sqrt_len = 1.0 / (len as f64).sqrt();

    let mut truth = GroundTruth::default();
    let mut by_seed: HashMap<u64, usize> = HashMap::new();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut frames = Vec::with_capacity(spec.total_frames());

    for planted in &spec.segments {
        let dir_idx = match by_seed.get(&planted.direction_seed) {
            Some(&i) => i,
            None => {
                let v = unit_direction(planted.direction_seed, len, &truth.directions);
                truth.directions.push(Matrix::from_vec(p, d, v).unwrap());
                by_seed.insert(planted.direction_seed, truth.directions.len() - 1);
                truth.directions.len() - 1
            }
        };
        let first = frames.len() as u64;
        let sigma = f64::from(planted.noise_scale) * inv_sqrt_len;
        let dir = truth.directions[dir_idx].as_slice();
        for _ in 0..planted.length {
            let data: Vec<f32> = dir
                .iter()
                .map(|&x| {
                    if sigma == 0.0 {
                        x
                    } else {
                        let z: f64 = StandardNormal.sample(&mut noise_rng);
                        (f64::from(x) + sigma * z) as f32
                    }
                })
                .collect();
            frames.push(FrameEmbedding::new(frames.len() as u64, Matrix::from_vec(p, d, data).unwrap()));
        }
        truth.segments.push(PlantedRange {
            first_frame: first,
            last_frame: frames.len() as u64 - 1,
            direction: dir_idx,
        });
    }

    for b in truth.boundaries() {
        let prev = frames[b as usize - 1].patches.as_slice();
        let cur = frames[b as usize].patches.as_slice();
        let s = cosine(prev, cur).unwrap_or(0.0);
        if s > spec.boundary_drop {
            return Err(SynthError::BoundaryNotAchieved { frame: b, similarity: s, target: spec.boundary_drop });
        }
    }

    Ok(SyntheticStream { header, frames, truth })
}

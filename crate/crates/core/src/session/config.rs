use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SessionError;
use crate::attn::StackConfig;
use crate::partition::PartitionConfig;
use crate::select::Allocation;

/// How segment boundaries are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partitioning {
    #[default]
    Semantic,
    /// Fixed chunks of `max_len` frames.
    Uniform,
}

/// Whether each segment contributes a summary token and block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryMode {
    #[default]
    On,
    Off,
}

/// Layer split used for compression and for retrieval, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum AllocationMode {
    #[default]
    #[serde(rename = "adaptive-adaptive")]
    AdaptiveAdaptive,
    #[serde(rename = "adaptive-uniform")]
    AdaptiveUniform,
    #[serde(rename = "uniform-adaptive")]
    UniformAdaptive,
    #[serde(rename = "uniform-uniform")]
    UniformUniform,
}

impl AllocationMode {
    pub const ALL: [AllocationMode; 4] = [
        AllocationMode::AdaptiveAdaptive,
        AllocationMode::AdaptiveUniform,
        AllocationMode::UniformAdaptive,
        AllocationMode::UniformUniform,
    ];

    pub fn compression(self) -> Allocation {
        match self {
            AllocationMode::AdaptiveAdaptive | AllocationMode::AdaptiveUniform => Allocation::Adaptive,
            _ => Allocation::Uniform,
        }
    }

    pub fn retrieval(self) -> Allocation {
        match self {
            AllocationMode::AdaptiveAdaptive | AllocationMode::UniformAdaptive => Allocation::Adaptive,
            _ => Allocation::Uniform,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AllocationMode::AdaptiveAdaptive => "adaptive-adaptive",
            AllocationMode::AdaptiveUniform => "adaptive-uniform",
            AllocationMode::UniformAdaptive => "uniform-adaptive",
            AllocationMode::UniformUniform => "uniform-uniform",
        }
    }
}

impl fmt::Display for AllocationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AllocationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.label() == s).ok_or_else(|| format!("unknown allocation mode {s:?}"))
    }
}

impl fmt::Display for Partitioning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partitioning::Semantic => "semantic",
            Partitioning::Uniform => "uniform",
        })
    }
}

impl fmt::Display for SummaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SummaryMode::On => "on",
            SummaryMode::Off => "off",
        })
    }
}

/// Where the compression guidance tokens come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceSource {
    /// `count` standard-normal tokens scaled by 1/√D_m, drawn from `seed`.
    Seeded {
        seed: u64,
        count: usize,
    },
    Tokens(Vec<Vec<f32>>),
    /// JSON array of token vectors.
    File(PathBuf),
}

impl Default for GuidanceSource {
    fn default() -> Self {
        GuidanceSource::Seeded { seed: 0, count: 8 }
    }
}

impl GuidanceSource {
    pub fn tokens(&self, model_dim: usize) -> Result<Vec<Vec<f32>>, SessionError> {
        match self {
            GuidanceSource::Seeded { seed, count } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let scale = 1.0 / (model_dim as f64).sqrt();
                Ok((0..*count)
                    .map(|_| {
                        (0..model_dim)
                            .map(|_| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                (z * scale) as f32
                            })
                            .collect()
                    })
                    .collect())
            }
            GuidanceSource::Tokens(t) => Ok(t.clone()),
            GuidanceSource::File(path) => {
                let text = std::fs::read_to_string(path)?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }
}

/// Execution strategy; both produce identical reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    #[default]
    Sequential,
    /// Partitioning, encoding and bank appends run on separate threads.
    Overlapped,
}

fn default_nr() -> usize {
    8
}

fn default_theta() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default)]
    pub stack: StackConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_nr")]
    pub n_r: usize,
    #[serde(default)]
    pub guidance: GuidanceSource,
    #[serde(default)]
    pub partitioning: Partitioning,
    #[serde(default)]
    pub summary: SummaryMode,
    #[serde(default)]
    pub allocation: AllocationMode,
    #[serde(default)]
    pub pipeline: Pipeline,
    /// Optional spill file mirroring the bank.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spill: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            stack: StackConfig::default(),
            partition: PartitionConfig::default(),
            theta: default_theta(),
            n_r: default_nr(),
            guidance: GuidanceSource::default(),
            partitioning: Partitioning::default(),
            summary: SummaryMode::default(),
            allocation: AllocationMode::default(),
            pipeline: Pipeline::default(),
            spill: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        self.stack.validate()?;
        self.partition.validate()?;
        if !(0.0..1.0).contains(&self.theta) {
            return Err(SessionError::Config(format!("theta {} outside [0, 1)", self.theta)));
        }
        if self.n_r == 0 {
            return Err(SessionError::Config("n_r must be >= 1".into()));
        }
        if cfg!(target_arch = "wasm32") && self.pipeline == Pipeline::Overlapped {
            return Err(SessionError::Config("the overlapped pipeline needs threads, which this target lacks".into()));
        }
        Ok(())
    }

    /// Replaces the stack seed and a seeded guidance source's seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.stack.seed = seed;
        if let GuidanceSource::Seeded { seed: s, .. } = &mut self.guidance {
            *s = seed;
        }
        self
    }

    pub fn with_modes(mut self, partitioning: Partitioning, summary: SummaryMode, allocation: AllocationMode) -> Self {
        self.partitioning = partitioning;
        self.summary = summary;
        self.allocation = allocation;
        self
    }
}

/// Parses the seed override variable, if set.
pub fn seed_from_env() -> Result<Option<u64>, SessionError> {
    match std::env::var(crate::SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| SessionError::Config(format!("{} is not an unsigned integer: {v:?}", crate::SEED_ENV))),
        Err(_) => Ok(None),
    }
}

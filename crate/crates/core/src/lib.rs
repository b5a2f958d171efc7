//! Streaming KV-cache compression with semantic segmentation and
//! layer-adaptive block selection.
//!
//! The pipeline: frame embeddings ([`stream`]) are split into segments
//! ([`partition`]), encoded through a toy attention stack ([`attn`]) into
//! per-layer KV blocks, compressed under a guidance criterion and stored in a
//! bank ([`bank`]) using the layer-adaptive selector ([`select`]). Questions
//! retrieve relevant blocks and attend over them ([`session`]).

pub mod attn;
pub mod bank;
pub mod events;
pub mod partition;
pub mod select;
pub mod session;
pub mod stream;
pub mod synth;
pub mod tensor;

/// Environment variable that overrides every configured seed.
pub const SEED_ENV: &str = "STREAMKV_SEED";

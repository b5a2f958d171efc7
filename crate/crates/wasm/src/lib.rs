//! Browser bindings for three interactive demos. Each returns a JSON string
//! for the page to draw. The `*_json` functions hold the logic and are
//! tested natively; the exported wrappers only convert errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use streamkv::attn::AttentionStack;
use streamkv::partition::{frame_similarity, partition_all, PartitionConfig, Partitioner};
use streamkv::select::{select_from_scores, select_uniform_from_scores, DEFAULT_EPSILON};
use streamkv::session::{boundary_f1, needle_events, run_synthetic, AllocationMode, SessionConfig};
use streamkv::synth::{gen_synthetic, SyntheticSpec};
use wasm_bindgen::prelude::*;

fn lengths(seed: u32, count: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    (0..count).map(|_| rng.random_range(8..=48)).collect()
}

/// Planted stream of `segments` segments at `noise`, partitioned at `threshold`.
pub fn partition_json(seed: u32, segments: usize, noise: f32, threshold: f64) -> Result<String, String> {
    let spec = SyntheticSpec::planted(u64::from(seed), &lengths(seed, segments.clamp(1, 24)), noise);
    let stream = gen_synthetic(&spec).map_err(|e| e.to_string())?;
    let config = PartitionConfig { threshold, ..PartitionConfig::default() };
    let detected = partition_all(Partitioner::new(config).map_err(|e| e.to_string())?, stream.frames.iter().cloned())
        .map_err(|e| e.to_string())?;
    let similarity: Vec<f64> = stream
        .frames
        .windows(2)
        .map(|w| frame_similarity(&w[0], &w[1]))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let planted = stream.truth.boundaries();
    let found: Vec<u64> = detected.iter().skip(1).map(|s| s.first_frame).collect();
    let score = boundary_f1(&found, &planted);
    let out = json!({
        "frames": stream.frames.len(),
        "similarity": similarity,
        "planted": planted,
        "detected": found,
        "segments": detected.iter().map(|s| json!({
            "first": s.first_frame,
            "last": s.last_frame,
            "len": s.len(),
            "merges": s.merge_log.len(),
        })).collect::<Vec<Value>>(),
        "f1": score.f1,
    });
    Ok(out.to_string())
}

/// Random per-layer scores whose sharpness spreads with `skew`, split
/// `budget` ways adaptively and uniformly.
pub fn allocation_json(seed: u32, layers: usize, items: usize, skew: f64, budget: usize) -> Result<String, String> {
    let (layers, items) = (layers.clamp(1, 8), items.clamp(1, 32));
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(seed));
    let scores: Vec<Vec<f64>> = (0..layers)
        .map(|_| {
            let sharpness = (skew * rng.random_range(-1.0..1.0)).exp();
            (0..items).map(|_| rng.random_range(-1.0..1.0) * sharpness).collect()
        })
        .collect();
    let budget = budget.min(layers * items);
    let adaptive = select_from_scores(&scores, budget, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let uniform = select_uniform_from_scores(&scores, budget).map_err(|e| e.to_string())?;
    let out = json!({
        "budget": budget,
        "threshold": adaptive.allocation.threshold,
        "iterations": adaptive.allocation.iterations,
        "layers": adaptive.sequences.iter().enumerate().map(|(l, s)| json!({
            "probs": s.probs,
            "adaptive": adaptive.allocation.counts[l],
            "uniform": uniform.allocation.counts[l],
        })).collect::<Vec<Value>>(),
        "adaptive_mass": adaptive.retained_mass(),
        "uniform_mass": uniform.retained_mass(),
    });
    Ok(out.to_string())
}

/// Five-segment needle session at compression ratio `theta`.
pub fn needle_json(seed: u32, theta: f64, n_r: usize, mode: &str) -> Result<String, String> {
    let spec = SyntheticSpec::planted(u64::from(seed), &[48, 40, 56, 44, 52], 0.05);
    let stream = gen_synthetic(&spec).map_err(|e| e.to_string())?;
    let mut config = SessionConfig::default().with_seed(u64::from(seed));
    config.theta = theta;
    config.n_r = n_r;
    config.allocation = mode.parse::<AllocationMode>()?;
    let stack = AttentionStack::new(config.stack).map_err(|e| e.to_string())?;
    let events = needle_events(&stack, &stream.truth, stream.frames.len() as u64 - 1).map_err(|e| e.to_string())?;
    let report = run_synthetic(&stream, &events, &config).map_err(|e| e.to_string())?;
    let segments = stream.truth.segments.len();
    let out = json!({
        "bank_blocks": report.bank.total_blocks,
        "bank_bytes": report.bank.total_bytes,
        "precision": report.needle_precision(),
        "accuracy": report.accuracy(),
        "questions": report.questions.iter().map(|q| {
            let mut per_segment = vec![0usize; segments];
            for b in &q.retrieved {
                if let Some(s) = stream.truth.segment_of(b.stream_pos) {
                    per_segment[s] += 1;
                }
            }
            json!({
                "expected": q.expected_segment,
                "answered": q.answered_segment,
                "correct": q.correct,
                "precision": q.needle_precision,
                "per_layer": q.per_layer,
                "per_segment": per_segment,
            })
        }).collect::<Vec<Value>>(),
    });
    Ok(out.to_string())
}

#[wasm_bindgen]
pub fn partition_demo(seed: u32, segments: usize, noise: f32, threshold: f64) -> Result<String, JsError> {
    partition_json(seed, segments, noise, threshold).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn allocation_demo(seed: u32, layers: usize, items: usize, skew: f64, budget: usize) -> Result<String, JsError> {
    allocation_json(seed, layers, items, skew, budget).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn needle_demo(seed: u32, theta: f64, n_r: usize, mode: &str) -> Result<String, JsError> {
    needle_json(seed, theta, n_r, mode).map_err(|e| JsError::new(&e))
}

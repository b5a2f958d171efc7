use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attn::{AttentionStack, AttnError};
use crate::events::QuestionEvent;
use crate::synth::{GroundTruth, SyntheticSpec};

/// A question about planted segment `segment`: its direction's patch rows
/// mapped into model dimension, one token per patch.
pub fn needle_question(
    stack: &AttentionStack,
    truth: &GroundTruth,
    segment: usize,
    at_frame: u64,
) -> Result<QuestionEvent, AttnError> {
    let tokens = stack.project_input(truth.direction_of_segment(segment))?;
    Ok(QuestionEvent {
        at_frame,
        tokens: tokens.row_iter().map(<[f32]>::to_vec).collect(),
        expected_segment: Some(segment as u32),
    })
}

/// One needle question per planted segment, all arriving after `at_frame`.
pub fn needle_events(
    stack: &AttentionStack,
    truth: &GroundTruth,
    at_frame: u64,
) -> Result<Vec<QuestionEvent>, AttnError> {
    (0..truth.segments.len()).map(|s| needle_question(stack, truth, s, at_frame)).collect()
}

/// `count` planted segments of strongly uneven length (8 to 60 frames, drawn
/// from `seed`) with light noise.
pub fn skewed_needle_spec(seed: u64, count: usize, noise_scale: f32) -> SyntheticSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0005_EED0_F5E6);
    let lengths: Vec<usize> =
        (0..count).map(|i| if i % 2 == 0 { rng.random_range(36..=60) } else { rng.random_range(8..=20) }).collect();
    SyntheticSpec::planted(seed, &lengths, noise_scale)
}

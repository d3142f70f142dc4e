//! Synthetic tasks: desk-scale stand-ins for annotated problems.
//!
//! A task's answer is a short digit string; its prompt features encode those
//! digits. The step axis lengthens the answer by one digit per rank, the
//! visual axis jitters the informative features, and the contextual axis
//! fills the padding slots with distractor values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{PolicyConfig, DIGIT_CHARS};
use crate::corpus::DifficultyCoordinate;
use crate::rng::substream;

/// Fixed prompt width: informative digit slots plus distractor padding.
pub const FEATURE_SLOTS: usize = 10;
/// Slots that can carry answer digits.
pub const DIGIT_SLOTS: usize = 6;
/// Digit-slot jitter amplitude when the visual axis is applied.
const VISUAL_NOISE: f64 = 0.15;
/// Answer length of a seed-coordinate task.
const BASE_STEPS: u32 = 1;

/// A synthetic problem instance the toy policy can attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub id: String,
    pub prompt_features: Vec<f64>,
    pub correct_answer: String,
    pub coordinate: DifficultyCoordinate,
    pub required_steps: u32,
}

/// Answer length implied by a coordinate: one decision step per s-rank on
/// top of the base step.
pub fn implied_steps(coordinate: DifficultyCoordinate) -> u32 {
    BASE_STEPS + coordinate.s
}

/// Build a task for a known answer. The feature layout (and any distractor
/// noise) is a pure function of (id, answer, coordinate, seed).
pub fn task_for_answer(
    id: &str,
    answer: &str,
    coordinate: DifficultyCoordinate,
    seed: u64,
) -> SyntheticTask {
    let mut rng = substream(seed, &["task", id]);
    let mut features = vec![0.0; FEATURE_SLOTS];
    for (slot, ch) in answer.bytes().take(DIGIT_SLOTS).enumerate() {
        let value = DIGIT_CHARS
            .iter()
            .position(|&d| d == ch)
            .map(|v| v as f64)
            .unwrap_or_else(|| (ch % 10) as f64);
        features[slot] = (value - 4.5) / 4.5;
    }
    if coordinate.v {
        for slot in features.iter_mut().take(DIGIT_SLOTS) {
            *slot += (rng.gen::<f64>() * 2.0 - 1.0) * VISUAL_NOISE;
        }
    }
    if coordinate.c {
        for slot in features.iter_mut().skip(DIGIT_SLOTS) {
            *slot = rng.gen::<f64>() * 2.0 - 1.0;
        }
    }
    SyntheticTask {
        id: id.to_string(),
        prompt_features: features,
        correct_answer: answer.to_string(),
        coordinate,
        required_steps: implied_steps(coordinate),
    }
}

/// Generate a deterministic batch of tasks at one difficulty coordinate.
pub fn generate_tasks(
    coordinate: DifficultyCoordinate,
    count: usize,
    seed: u64,
) -> Vec<SyntheticTask> {
    let digits = implied_steps(coordinate) as usize;
    let mut rng = substream(seed, &["generate-tasks"]);
    (0..count)
        .map(|i| {
            let answer: String = (0..digits)
                .map(|_| char::from(b'0' + rng.gen_range(0..10u8)))
                .collect();
            task_for_answer(&format!("gen-{i}"), &answer, coordinate, seed)
        })
        .collect()
}

/// Teacher target for a task: separator, answer digits, end marker.
pub fn target_completion(cfg: &PolicyConfig, answer: &str) -> Vec<usize> {
    let mut tokens = vec![cfg.sep_token()];
    for ch in answer.bytes() {
        let token = DIGIT_CHARS
            .iter()
            .position(|&d| d == ch)
            .unwrap_or((ch % 10) as usize);
        tokens.push(token.min(cfg.digit_count().saturating_sub(1)));
    }
    tokens.push(cfg.eos_token());
    tokens
}

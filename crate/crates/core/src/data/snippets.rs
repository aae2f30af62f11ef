use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// How fixed-length windows are cut from a longer trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SnippetPolicy {
    /// Windows starting every `stride` frames.
    Stride { stride: usize },
    /// Up to `count` windows at random starts; each accepted window overlaps the
    /// previously accepted one by at most `max_overlap` of its length.
    Random { count: usize, max_overlap: f64 },
}

impl Default for SnippetPolicy {
    fn default() -> Self {
        SnippetPolicy::Random {
            count: 64,
            max_overlap: 0.5,
        }
    }
}

/// Frame-index windows of exactly `length` frames from a trajectory of `frames` frames.
pub fn sample_snippets(frames: usize, length: usize, policy: SnippetPolicy, seed: u64) -> Result<Vec<Range<usize>>> {
    if length == 0 {
        return Err(DataError::Contract("snippet length must be positive".into()));
    }
    if frames < length {
        return Err(DataError::Contract(format!(
            "trajectory of {frames} frames is shorter than snippet length {length}"
        )));
    }
    let last_start = frames - length;
    match policy {
        SnippetPolicy::Stride { stride } => {
            if stride == 0 {
                return Err(DataError::Contract("snippet stride must be positive".into()));
            }
            Ok((0..=last_start).step_by(stride).map(|s| s..s + length).collect())
        }
        SnippetPolicy::Random { count, max_overlap } => {
            if !(0.0..=1.0).contains(&max_overlap) {
                return Err(DataError::Contract(format!("max_overlap {max_overlap} outside [0, 1]")));
            }
            let max_shared = (max_overlap * length as f64).floor() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut windows: Vec<Range<usize>> = Vec::with_capacity(count);
            let attempts = count.saturating_mul(20).max(20);
            for _ in 0..attempts {
                if windows.len() == count {
                    break;
                }
                let start = rng.random_range(0..=last_start);
                let ok = windows.last().is_none_or(|prev| {
                    let shared = prev.end.min(start + length).saturating_sub(prev.start.max(start));
                    shared <= max_shared
                });
                if ok {
                    windows.push(start..start + length);
                }
            }
            Ok(windows)
        }
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FrameSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecAugmentConfig {
    pub time_masks: usize,
    pub freq_masks: usize,
    /// Maximum width of a time mask, in frames.
    pub max_t: usize,
    /// Maximum width of a feature mask, in dims.
    pub max_f: usize,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        Self {
            time_masks: 2,
            freq_masks: 2,
            max_t: 20,
            max_f: 8,
        }
    }
}

impl SpecAugmentConfig {
    pub fn none() -> Self {
        Self {
            time_masks: 0,
            freq_masks: 0,
            max_t: 0,
            max_f: 0,
        }
    }
}

/// Time and feature masking. Masked cells take the mean of the whole input.
/// Widths are clamped to the series size.
pub fn spec_augment(features: &FrameSeries, cfg: &SpecAugmentConfig, seed: u64) -> FrameSeries {
    let mut out = features.clone();
    if cfg.time_masks == 0 && cfg.freq_masks == 0 {
        return out;
    }
    let fill = features.mean();
    let (frames, dims) = (features.frames(), features.dims());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.time_masks {
        let width = rng.gen_range(0..=cfg.max_t.min(frames));
        let start = rng.gen_range(0..=frames - width);
        for i in start..start + width {
            out.row_mut(i).fill(fill);
        }
    }
    for _ in 0..cfg.freq_masks {
        let width = rng.gen_range(0..=cfg.max_f.min(dims));
        let start = rng.gen_range(0..=dims - width);
        for i in 0..frames {
            out.row_mut(i)[start..start + width].fill(fill);
        }
    }
    out
}

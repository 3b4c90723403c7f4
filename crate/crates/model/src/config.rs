//! Model hyperparameters shared by every stage.

use mage_datagen::DatasetKind;
use serde::{Deserialize, Serialize};

/// Full architectural configuration. Persisted verbatim inside checkpoints;
/// loading verifies compatibility between stages.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Frame edge length in pixels (64 for glyph sets, 128 for tabletop).
    pub image_side: usize,
    pub image_channels: usize,
    /// Spatial downsampling ratio of the frame tokenizer (4 or 8); chosen so
    /// every supported resolution compresses to a 16x16 token grid.
    pub downsample: usize,
    /// Codebook entries (K).
    pub codebook_size: usize,
    /// Codebook vector width (D).
    pub codebook_dim: usize,
    /// Commitment loss weight (beta).
    pub beta_commit: f64,

    /// Caption vocabulary size, fixed once the vocabulary is built.
    pub vocab_size: usize,
    /// Maximum caption length in tokens.
    pub l_max: usize,

    /// Transformer hidden width (d).
    pub d_model: usize,
    pub heads: usize,
    /// Stacked axial transformer blocks (N).
    pub blocks: usize,
    /// Latent-randomness width (d_r).
    pub d_r: usize,
    /// Generated sequence length in frames (T), including the given frame.
    pub t_frames: usize,
    /// Frame-sampling interval range (a_min, a_max) that speed maps into.
    pub interval_range: (f64, f64),
    /// Deterministic mode: implicit randomness fixed to zero and the AdaIN
    /// scale/shift path bypassed.
    pub deterministic: bool,

    /// Speed-condition penalty weight (alpha).
    pub alpha: f64,
    /// KL penalty weight (beta_kl), linearly warmed up in training.
    pub beta_kl: f64,
}

impl ModelConfig {
    /// Paper-scale defaults for a dataset family.
    pub fn defaults(kind: DatasetKind) -> ModelConfig {
        ModelConfig {
            image_side: kind.canvas(),
            image_channels: kind.channels(),
            downsample: kind.canvas() / 16,
            codebook_size: 512,
            codebook_dim: 256,
            beta_commit: 0.25,
            vocab_size: 0,
            l_max: 32,
            d_model: 512,
            heads: 8,
            blocks: 2,
            d_r: 64,
            t_frames: 10,
            interval_range: kind.interval_range(),
            deterministic: true,
            alpha: 1e-4,
            beta_kl: 1e-3,
        }
    }

    /// Shrunk configuration that trains to a useful model on a single CPU in
    /// minutes-to-hours rather than GPU-days. Architecture and losses are
    /// unchanged; only widths differ.
    pub fn desk(kind: DatasetKind) -> ModelConfig {
        ModelConfig {
            codebook_dim: 64,
            d_model: 64,
            heads: 4,
            d_r: 64,
            ..ModelConfig::defaults(kind)
        }
    }

    /// Token grid edge (h = w = image_side / downsample).
    pub fn token_side(&self) -> usize {
        assert_eq!(
            self.image_side % self.downsample,
            0,
            "image side {} not divisible by downsample {}",
            self.image_side,
            self.downsample
        );
        self.image_side / self.downsample
    }

    /// Tokens per frame (h*w).
    pub fn tokens_per_frame(&self) -> usize {
        self.token_side() * self.token_side()
    }

    /// Temporal slots seen by the generator: the anchor pseudo-frame plus
    /// every video frame.
    pub fn max_sequence(&self) -> usize {
        self.t_frames + 1
    }

    /// Frame-sampling interval for a speed scalar.
    pub fn interval(&self, eta: f64) -> f64 {
        assert!((0.0..=1.0).contains(&eta), "speed {eta} outside [0, 1]");
        let (a_min, a_max) = self.interval_range;
        a_min + eta * (a_max - a_min)
    }

    /// 0-based raw-frame indices selected for a speed scalar: 1-based frames
    /// `round(1 + k*interval)` for k = 0..T.
    pub fn subsample_indices(&self, eta: f64, raw_frames: usize) -> Vec<usize> {
        let interval = self.interval(eta);
        (0..self.t_frames)
            .map(|k| {
                let one_based = (1.0 + k as f64 * interval).round() as usize;
                assert!(
                    one_based >= 1 && one_based <= raw_frames,
                    "subsample index {one_based} outside 1..={raw_frames}"
                );
                one_based - 1
            })
            .collect()
    }

    /// Checks that a companion checkpoint (e.g. the frozen tokenizer under a
    /// generator) agrees on every shared dimension.
    pub fn compatible_tokenizer(&self, other: &ModelConfig) -> Result<(), String> {
        let pairs = [
            ("image_side", self.image_side, other.image_side),
            ("image_channels", self.image_channels, other.image_channels),
            ("downsample", self.downsample, other.downsample),
            ("codebook_size", self.codebook_size, other.codebook_size),
            ("codebook_dim", self.codebook_dim, other.codebook_dim),
        ];
        for (name, a, b) in pairs {
            if a != b {
                return Err(format!("{name} mismatch: {a} vs {b}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_resolutions_compress_to_a_16_grid() {
        assert_eq!(ModelConfig::defaults(DatasetKind::SingleMnist).token_side(), 16);
        assert_eq!(ModelConfig::defaults(DatasetKind::CaterV1).token_side(), 16);
        assert_eq!(ModelConfig::defaults(DatasetKind::CaterV1).downsample, 8);
    }

    #[test]
    fn interval_mapping_is_affine_and_in_range() {
        let cfg = ModelConfig::defaults(DatasetKind::SingleMnist);
        assert_eq!(cfg.interval(0.5), 1.5);
        let cater = ModelConfig::defaults(DatasetKind::CaterV1);
        assert_eq!(cater.interval(0.0), 3.0);
        assert_eq!(cater.interval(1.0), 6.0);
        for eta in [0.1, 0.25, 0.75, 0.9] {
            let i = cater.interval(eta);
            assert!((3.0..=6.0).contains(&i));
        }
    }

    #[test]
    fn subsampling_follows_the_rounding_rule() {
        let cfg = ModelConfig::defaults(DatasetKind::SingleMnist);
        // interval 1.5: 1-based frames 1, 2.5->3, 4, 5.5->6, ...
        let idx = cfg.subsample_indices(0.5, 20);
        assert_eq!(idx, vec![0, 2, 3, 5, 6, 8, 9, 11, 12, 14]);
        // slowest glyph speed still fits the 20-frame raw clip
        let idx = cfg.subsample_indices(1.0, 20);
        assert_eq!(idx.len(), 10);
        assert_eq!(*idx.last().unwrap(), 18);
        // fastest tabletop speed fits the 60-frame raw clip
        let cater = ModelConfig::defaults(DatasetKind::CaterV2);
        assert_eq!(*cater.subsample_indices(1.0, 60).last().unwrap(), 54);
    }
}

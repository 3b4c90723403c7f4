//! Flat run configuration with three layers: desk-scale defaults, an optional
//! TOML file, then command-line flags. Every file key has a matching flag, the
//! file parser rejects unknown keys, and `MAGE_OUT_ROOT` re-roots relative
//! output paths so batch jobs can redirect artifacts without editing configs.
//!
//! Schema (all keys optional in the file; defaults in parentheses):
//!
//! | key               | type   | meaning                                                    |
//! |-------------------|--------|------------------------------------------------------------|
//! | kind              | string | dataset family: single_mnist, double_mnist, modified_mnist, cater_v1, cater_v2 (single_mnist) |
//! | seed              | int    | master seed for synthesis, training, and sampling (7)      |
//! | data_dir          | string | dataset root read by train/generate/evaluate ("data")      |
//! | out_dir           | string | where the command writes its artifacts ("out")             |
//! | n_train           | int    | training samples; 0 = family default (0)                   |
//! | n_test            | int    | held-out samples; 0 = family default (0)                   |
//! | codebook_size     | int    | tokenizer codebook entries (512)                           |
//! | codebook_dim      | int    | tokenizer code width (64)                                  |
//! | downsample        | int    | tokenizer spatial ratio (4 glyph / 8 tabletop)             |
//! | d_model           | int    | transformer width (64)                                     |
//! | heads             | int    | attention heads; must divide d_model (4)                   |
//! | blocks            | int    | axial transformer blocks (2)                               |
//! | d_r               | int    | implicit-randomness width (64)                             |
//! | l_max             | int    | caption length cap in tokens (32)                          |
//! | t_frames          | int    | generated frames per clip, given frame included (10)       |
//! | interval_min      | float  | frame-sampling interval at speed 0 (1.0 glyph / 3.0 tabletop) |
//! | interval_max      | float  | frame-sampling interval at speed 1 (2.0 glyph / 6.0 tabletop) |
//! | deterministic     | bool   | zero implicit randomness, bypass scale/shift injection (true) |
//! | alpha             | float  | speed-condition magnitude penalty weight (1e-4)            |
//! | beta_kl           | float  | bottleneck KL weight after warmup (1e-3)                   |
//! | beta_commit       | float  | tokenizer commitment weight (0.25)                         |
//! | vq_steps          | int    | tokenizer optimizer steps (600)                            |
//! | vq_batch          | int    | tokenizer batch size in frames (16)                        |
//! | vq_lr             | float  | tokenizer learning rate (3e-4)                             |
//! | mage_steps        | int    | generator optimizer steps (400)                            |
//! | mage_batch        | int    | generator batch size in clips (8)                          |
//! | mage_lr           | float  | generator learning rate (5e-5)                             |
//! | lr_warmup_frac    | float  | fraction of steps warming the learning rate (0.05)         |
//! | kl_warmup_frac    | float  | fraction of steps ramping the KL weight (0.1)              |
//! | clip_norm         | float  | global gradient-norm clip (1.0)                            |
//! | log_every         | int    | steps between training log rows (25)                       |
//! | caption_mode      | string | which manifest caption to condition on: explicit, ambiguous (explicit) |
//! | eta               | float  | motion speed, strictly between 0 and 1 (0.5)               |
//! | n_samples         | int    | clips per caption in `generate` (1)                        |
//! | eval_draws        | int    | stochastic draws per test sample in `evaluate` (5)         |
//! | eval_max_samples  | int    | cap on evaluated test samples; 0 = all (0)                 |
//! | heatmaps          | bool   | also export attention overlays during evaluate (false)     |

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use mage_datagen::{DatasetConfig, DatasetKind};
use mage_model::train::MageTrainConfig;
use mage_model::vq::VqTrainConfig;
use mage_model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that re-roots relative `out_dir`/`data_dir` values.
pub const OUT_ROOT_ENV: &str = "MAGE_OUT_ROOT";

/// Which manifest caption column conditions the generator.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionMode {
    Explicit,
    Ambiguous,
}

impl CaptionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CaptionMode::Explicit => "explicit",
            CaptionMode::Ambiguous => "ambiguous",
        }
    }

    pub fn parse(s: &str) -> Option<CaptionMode> {
        match s {
            "explicit" => Some(CaptionMode::Explicit),
            "ambiguous" => Some(CaptionMode::Ambiguous),
            _ => None,
        }
    }
}

/// Raw TOML contents. Every field optional; unknown keys are an error so a
/// typo cannot silently fall back to a default.
#[derive(Default, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    kind: Option<String>,
    seed: Option<u64>,
    data_dir: Option<String>,
    out_dir: Option<String>,
    n_train: Option<usize>,
    n_test: Option<usize>,
    codebook_size: Option<usize>,
    codebook_dim: Option<usize>,
    downsample: Option<usize>,
    d_model: Option<usize>,
    heads: Option<usize>,
    blocks: Option<usize>,
    d_r: Option<usize>,
    l_max: Option<usize>,
    t_frames: Option<usize>,
    interval_min: Option<f64>,
    interval_max: Option<f64>,
    deterministic: Option<bool>,
    alpha: Option<f64>,
    beta_kl: Option<f64>,
    beta_commit: Option<f64>,
    vq_steps: Option<usize>,
    vq_batch: Option<usize>,
    vq_lr: Option<f64>,
    mage_steps: Option<usize>,
    mage_batch: Option<usize>,
    mage_lr: Option<f64>,
    lr_warmup_frac: Option<f64>,
    kl_warmup_frac: Option<f64>,
    clip_norm: Option<f64>,
    log_every: Option<usize>,
    caption_mode: Option<String>,
    eta: Option<f64>,
    n_samples: Option<usize>,
    eval_draws: Option<usize>,
    eval_max_samples: Option<usize>,
    heatmaps: Option<bool>,
}

/// Flags shared by every subcommand. Each one overrides the matching config
/// key; `--config` points at the TOML layer underneath.
#[derive(Default, Debug, Args)]
pub struct Overrides {
    /// TOML config file applied under these flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset family (single_mnist, double_mnist, modified_mnist, cater_v1, cater_v2).
    #[arg(long)]
    pub kind: Option<String>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset root to read from.
    #[arg(long = "data", value_name = "DIR")]
    pub data_dir: Option<String>,
    /// Output directory for this command's artifacts.
    #[arg(long = "out", value_name = "DIR")]
    pub out_dir: Option<String>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub codebook_size: Option<usize>,
    #[arg(long)]
    pub codebook_dim: Option<usize>,
    #[arg(long)]
    pub downsample: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub d_r: Option<usize>,
    #[arg(long)]
    pub l_max: Option<usize>,
    #[arg(long)]
    pub t_frames: Option<usize>,
    #[arg(long)]
    pub interval_min: Option<f64>,
    #[arg(long)]
    pub interval_max: Option<f64>,
    /// true or false; stochastic models need `--deterministic false`.
    #[arg(long)]
    pub deterministic: Option<bool>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta_kl: Option<f64>,
    #[arg(long)]
    pub beta_commit: Option<f64>,
    #[arg(long)]
    pub vq_steps: Option<usize>,
    #[arg(long)]
    pub vq_batch: Option<usize>,
    #[arg(long)]
    pub vq_lr: Option<f64>,
    #[arg(long)]
    pub mage_steps: Option<usize>,
    #[arg(long)]
    pub mage_batch: Option<usize>,
    #[arg(long)]
    pub mage_lr: Option<f64>,
    #[arg(long)]
    pub lr_warmup_frac: Option<f64>,
    #[arg(long)]
    pub kl_warmup_frac: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Caption column to condition on (explicit or ambiguous).
    #[arg(long)]
    pub caption_mode: Option<String>,
    /// Motion speed, strictly between 0 and 1.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub eval_draws: Option<usize>,
    #[arg(long)]
    pub eval_max_samples: Option<usize>,
    #[arg(long)]
    pub heatmaps: Option<bool>,
}

/// Fully resolved configuration every command runs from. Serialized into each
/// run's `run.json` so any output can be replayed.
#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct RunConfig {
    pub kind: DatasetKind,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub codebook_size: usize,
    pub codebook_dim: usize,
    pub downsample: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub d_r: usize,
    pub l_max: usize,
    pub t_frames: usize,
    pub interval_min: f64,
    pub interval_max: f64,
    pub deterministic: bool,
    pub alpha: f64,
    pub beta_kl: f64,
    pub beta_commit: f64,
    pub vq_steps: usize,
    pub vq_batch: usize,
    pub vq_lr: f64,
    pub mage_steps: usize,
    pub mage_batch: usize,
    pub mage_lr: f64,
    pub lr_warmup_frac: f64,
    pub kl_warmup_frac: f64,
    pub clip_norm: f64,
    pub log_every: usize,
    pub caption_mode: CaptionMode,
    pub eta: f64,
    pub n_samples: usize,
    pub eval_draws: usize,
    pub eval_max_samples: usize,
    pub heatmaps: bool,
}

fn reroot(path: &str) -> PathBuf {
    let p = PathBuf::from(path);
    match env::var(OUT_ROOT_ENV) {
        Ok(root) if p.is_relative() && !root.is_empty() => PathBuf::from(root).join(p),
        _ => p,
    }
}

impl RunConfig {
    /// Layer flags over the optional file over desk-scale defaults, then
    /// validate. All failures here are usage errors.
    pub fn resolve(flags: &Overrides) -> Result<RunConfig, CliError> {
        let file = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", path.display()))
                })?;
                toml::from_str::<FileConfig>(&text).map_err(|e| {
                    CliError::Usage(format!("bad config {}: {e}", path.display()))
                })?
            }
            None => FileConfig::default(),
        };

        let kind_str = flags
            .kind
            .clone()
            .or(file.kind)
            .unwrap_or_else(|| DatasetKind::SingleMnist.as_str().to_string());
        let kind = DatasetKind::parse(&kind_str).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown dataset kind {kind_str:?}; expected one of single_mnist, double_mnist, modified_mnist, cater_v1, cater_v2"
            ))
        })?;

        let base = ModelConfig::desk(kind);
        let vq = VqTrainConfig::default();
        let mage = MageTrainConfig::default();

        macro_rules! pick {
            ($field:ident, $default:expr) => {
                flags.$field.or(file.$field).unwrap_or($default)
            };
        }

        let caption_mode_str = flags
            .caption_mode
            .clone()
            .or(file.caption_mode)
            .unwrap_or_else(|| CaptionMode::Explicit.as_str().to_string());
        let caption_mode = CaptionMode::parse(&caption_mode_str).ok_or_else(|| {
            CliError::Usage(format!(
                "unknown caption_mode {caption_mode_str:?}; expected explicit or ambiguous"
            ))
        })?;

        let data_dir =
            flags.data_dir.clone().or(file.data_dir).unwrap_or_else(|| "data".to_string());
        let out_dir = flags.out_dir.clone().or(file.out_dir).unwrap_or_else(|| "out".to_string());

        let cfg = RunConfig {
            kind,
            seed: pick!(seed, 7),
            data_dir: reroot(&data_dir),
            out_dir: reroot(&out_dir),
            n_train: pick!(n_train, 0),
            n_test: pick!(n_test, 0),
            codebook_size: pick!(codebook_size, base.codebook_size),
            codebook_dim: pick!(codebook_dim, base.codebook_dim),
            downsample: pick!(downsample, base.downsample),
            d_model: pick!(d_model, base.d_model),
            heads: pick!(heads, base.heads),
            blocks: pick!(blocks, base.blocks),
            d_r: pick!(d_r, base.d_r),
            l_max: pick!(l_max, base.l_max),
            t_frames: pick!(t_frames, base.t_frames),
            interval_min: pick!(interval_min, base.interval_range.0),
            interval_max: pick!(interval_max, base.interval_range.1),
            deterministic: pick!(deterministic, true),
            alpha: pick!(alpha, base.alpha),
            beta_kl: pick!(beta_kl, base.beta_kl),
            beta_commit: pick!(beta_commit, base.beta_commit),
            vq_steps: pick!(vq_steps, vq.steps),
            vq_batch: pick!(vq_batch, vq.batch),
            vq_lr: pick!(vq_lr, vq.lr),
            mage_steps: pick!(mage_steps, mage.steps),
            mage_batch: pick!(mage_batch, mage.batch),
            mage_lr: pick!(mage_lr, mage.lr),
            lr_warmup_frac: pick!(lr_warmup_frac, mage.lr_warmup_frac),
            kl_warmup_frac: pick!(kl_warmup_frac, mage.kl_warmup_frac),
            clip_norm: pick!(clip_norm, mage.clip_norm),
            log_every: pick!(log_every, vq.log_every),
            caption_mode,
            eta: pick!(eta, 0.5),
            n_samples: pick!(n_samples, 1),
            eval_draws: pick!(eval_draws, 5),
            eval_max_samples: pick!(eval_max_samples, 0),
            heatmaps: pick!(heatmaps, false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("heads {} must divide d_model {}", self.heads, self.d_model));
        }
        if self.downsample == 0 || self.kind.canvas() % self.downsample != 0 {
            return bad(format!(
                "downsample {} must divide the {}px canvas",
                self.downsample,
                self.kind.canvas()
            ));
        }
        if self.t_frames < 2 {
            return bad(format!("t_frames {} too small; need at least 2", self.t_frames));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta {} out of range; must lie strictly between 0 and 1", self.eta));
        }
        if self.interval_min <= 0.0 || self.interval_max < self.interval_min {
            return bad(format!(
                "interval range ({}, {}) invalid; need 0 < min <= max",
                self.interval_min, self.interval_max
            ));
        }
        // Even the slowest speed must keep every subsampled frame inside the
        // raw clip.
        let last = 1.0 + (self.t_frames as f64 - 1.0) * self.interval_max;
        if last.round() as usize > self.kind.raw_frames() {
            return bad(format!(
                "t_frames {} at interval {} overruns the {}-frame raw clips",
                self.t_frames,
                self.interval_max,
                self.kind.raw_frames()
            ));
        }
        for (name, v) in [
            ("vq_steps", self.vq_steps),
            ("vq_batch", self.vq_batch),
            ("mage_steps", self.mage_steps),
            ("mage_batch", self.mage_batch),
            ("codebook_size", self.codebook_size),
            ("codebook_dim", self.codebook_dim),
            ("d_model", self.d_model),
            ("blocks", self.blocks),
            ("d_r", self.d_r),
            ("l_max", self.l_max),
            ("n_samples", self.n_samples),
            ("eval_draws", self.eval_draws),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Architectural config for this run; `vocab_size` stays 0 until a
    /// vocabulary is built or a checkpoint supplies one.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_side: self.kind.canvas(),
            image_channels: self.kind.channels(),
            downsample: self.downsample,
            codebook_size: self.codebook_size,
            codebook_dim: self.codebook_dim,
            beta_commit: self.beta_commit,
            vocab_size: 0,
            l_max: self.l_max,
            d_model: self.d_model,
            heads: self.heads,
            blocks: self.blocks,
            d_r: self.d_r,
            t_frames: self.t_frames,
            interval_range: (self.interval_min, self.interval_max),
            deterministic: self.deterministic,
            alpha: self.alpha,
            beta_kl: self.beta_kl,
        }
    }

    pub fn vq_train_config(&self) -> VqTrainConfig {
        VqTrainConfig {
            steps: self.vq_steps,
            batch: self.vq_batch,
            lr: self.vq_lr,
            beta: self.beta_commit,
            seed: self.seed,
            log_every: self.log_every,
        }
    }

    pub fn mage_train_config(&self) -> MageTrainConfig {
        MageTrainConfig {
            steps: self.mage_steps,
            batch: self.mage_batch,
            lr: self.mage_lr,
            lr_warmup_frac: self.lr_warmup_frac,
            kl_warmup_frac: self.kl_warmup_frac,
            clip_norm: self.clip_norm,
            seed: self.seed,
            log_every: self.log_every,
        }
    }

    /// Dataset synthesis config; zero counts fall back to the family default.
    pub fn dataset_config(&self, out_dir: &Path) -> DatasetConfig {
        let (dn_train, dn_test) = self.kind.default_counts();
        DatasetConfig {
            kind: self.kind,
            n_train: if self.n_train == 0 { dn_train } else { self.n_train },
            n_test: if self.n_test == 0 { dn_test } else { self.n_test },
            seed: self.seed,
            out_dir: out_dir.to_path_buf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn flags() -> Overrides {
        Overrides::default()
    }

    #[test]
    fn defaults_resolve_to_the_desk_model() {
        let cfg = RunConfig::resolve(&flags()).unwrap();
        assert_eq!(cfg.kind, DatasetKind::SingleMnist);
        assert_eq!(cfg.d_model, 64);
        assert_eq!(cfg.codebook_dim, 64);
        assert_eq!(cfg.codebook_size, 512);
        assert_eq!(cfg.heads, 4);
        assert!(cfg.deterministic);
        let mc = cfg.model_config();
        assert_eq!(mc.token_side(), 16);
        assert_eq!(mc.interval_range, (1.0, 2.0));
    }

    #[test]
    fn file_overrides_defaults_and_flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "kind = \"cater_v1\"\nseed = 99\nvq_steps = 50").unwrap();
        drop(f);

        let mut fl = flags();
        fl.config = Some(path);
        fl.seed = Some(123);
        let cfg = RunConfig::resolve(&fl).unwrap();
        assert_eq!(cfg.kind, DatasetKind::CaterV1);
        assert_eq!(cfg.seed, 123, "flag beats file");
        assert_eq!(cfg.vq_steps, 50, "file beats default");
        assert_eq!(cfg.downsample, 8, "tabletop default follows the kind");
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "sede = 3\n").unwrap();
        let mut fl = flags();
        fl.config = Some(path);
        let err = RunConfig::resolve(&fl).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("sede"), "message names the bad key: {err}");
    }

    #[test]
    fn out_of_range_values_are_usage_errors() {
        for (set, msg) in [
            (Box::new(|f: &mut Overrides| f.eta = Some(1.0)) as Box<dyn Fn(&mut Overrides)>, "eta"),
            (Box::new(|f: &mut Overrides| f.eta = Some(0.0)), "eta"),
            (Box::new(|f: &mut Overrides| f.heads = Some(7)), "heads"),
            (Box::new(|f: &mut Overrides| f.t_frames = Some(1)), "t_frames"),
            (Box::new(|f: &mut Overrides| f.vq_steps = Some(0)), "vq_steps"),
            (Box::new(|f: &mut Overrides| f.kind = Some("mnist".into())), "kind"),
            (Box::new(|f: &mut Overrides| f.caption_mode = Some("vague".into())), "caption_mode"),
        ] {
            let mut fl = flags();
            set(&mut fl);
            let err = RunConfig::resolve(&fl).expect_err(msg);
            assert_eq!(err.exit_code(), 1, "{msg} should be a usage error");
            assert!(err.to_string().contains(msg), "{msg} named in: {err}");
        }
    }

    #[test]
    fn long_clips_cannot_overrun_the_raw_footage() {
        let mut fl = flags();
        fl.t_frames = Some(15);
        fl.interval_max = Some(2.0);
        assert!(RunConfig::resolve(&fl).is_err(), "15 frames at interval 2 needs 29 raw frames");
        fl.interval_max = Some(1.3);
        assert!(RunConfig::resolve(&fl).is_ok(), "15 frames at interval 1.3 fits 20 raw frames");
    }

    #[test]
    fn output_root_env_reroots_relative_paths_only() {
        // Env vars are process-global, so exercise the helper directly.
        std::env::set_var(OUT_ROOT_ENV, "/tmp/mage-root");
        assert_eq!(reroot("runs/a"), PathBuf::from("/tmp/mage-root/runs/a"));
        assert_eq!(reroot("/abs/b"), PathBuf::from("/abs/b"));
        std::env::remove_var(OUT_ROOT_ENV);
        assert_eq!(reroot("runs/a"), PathBuf::from("runs/a"));
    }
}

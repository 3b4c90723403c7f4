//! Subcommand implementations plus the plumbing they share: checkpoint
//! loading with stage and compatibility verification, dataset lookups, and
//! the per-run `run.json` log that makes any invocation replayable.

pub mod datagen;
pub mod evaluate;
pub mod generate;
pub mod train;
pub mod visualize;

use std::fs;
use std::path::{Path, PathBuf};

use mage_autograd::ParamStore;
use mage_datagen::dataset::{read_summary, DatasetSummary, ManifestRecord};
use mage_datagen::VideoTensor;
use mage_model::checkpoint::{load_checkpoint, Stage};
use mage_model::text::{tokenize_words, TokenizedText, Vocabulary};
use mage_model::train::Mage;
use mage_model::vq::VqVae;
use mage_model::ModelConfig;

use crate::config::{CaptionMode, RunConfig};
use crate::media;
use crate::{runtime, usage, CliError};

/// A generator checkpoint plus the frozen tokenizer it rides on, verified to
/// agree on every shared dimension.
pub struct LoadedStack {
    pub mage_cfg: ModelConfig,
    pub mage_store: ParamStore<f32>,
    pub mage: Mage,
    pub vocab: Vocabulary,
    pub mage_step: u64,
    pub mage_fingerprint: String,
    pub vq_store: ParamStore<f32>,
    pub vq: VqVae,
}

/// Load generator + tokenizer checkpoints for sampling-side commands.
/// Wrong stages, incompatible dimensions, or unreadable files are usage
/// errors; corrupt parameter payloads are runtime errors.
pub fn load_stack(mage_path: &Path, vq_path: &Path) -> Result<LoadedStack, CliError> {
    let mage_ckpt = load_checkpoint(mage_path)
        .map_err(|e| usage(format!("cannot load checkpoint {}: {e}", mage_path.display())))?;
    mage_ckpt.expect_stage(Stage::Generator).map_err(usage)?;
    let vq_ckpt = load_checkpoint(vq_path)
        .map_err(|e| usage(format!("cannot load checkpoint {}: {e}", vq_path.display())))?;
    vq_ckpt.expect_stage(Stage::Tokenizer).map_err(usage)?;
    mage_ckpt.config.compatible_tokenizer(&vq_ckpt.config).map_err(|m| {
        usage(format!("generator and tokenizer checkpoints disagree: {m}"))
    })?;
    if mage_ckpt.fingerprint != vq_ckpt.fingerprint {
        log::warn!(
            "generator and tokenizer were trained on different datasets ({} vs {})",
            short_fp(&mage_ckpt.fingerprint),
            short_fp(&vq_ckpt.fingerprint)
        );
    }
    let (mage_store, mage, vocab) = mage_ckpt.into_mage().map_err(runtime)?;
    let (vq_store, vq) = vq_ckpt.into_vqvae().map_err(runtime)?;
    Ok(LoadedStack {
        mage_cfg: mage_ckpt.config,
        mage_store,
        mage,
        vocab,
        mage_step: mage_ckpt.step,
        mage_fingerprint: mage_ckpt.fingerprint,
        vq_store,
        vq,
    })
}

pub fn short_fp(fingerprint: &str) -> &str {
    &fingerprint[..fingerprint.len().min(16)]
}

/// Read `dataset.json` under the configured data directory and insist the
/// configured kind matches what is on disk.
pub fn load_summary(cfg: &RunConfig) -> Result<DatasetSummary, CliError> {
    let summary = read_summary(&cfg.data_dir).map_err(|e| {
        usage(format!(
            "no dataset at {}: {e}; run the datagen command first or pass --data",
            cfg.data_dir.display()
        ))
    })?;
    if summary.kind != cfg.kind {
        return Err(usage(format!(
            "dataset at {} holds {} but the run is configured for {}; pass --kind {}",
            cfg.data_dir.display(),
            summary.kind,
            cfg.kind,
            summary.kind
        )));
    }
    Ok(summary)
}

pub fn caption_of(record: &ManifestRecord, mode: CaptionMode) -> &str {
    match mode {
        CaptionMode::Explicit => &record.explicit_caption,
        CaptionMode::Ambiguous => &record.ambiguous_caption,
    }
}

/// Tokenize a free-form caption, reporting which words fell outside the
/// vocabulary (each is substituted by the unknown token).
pub fn tokenize_caption(
    vocab: &Vocabulary,
    caption: &str,
    l_max: usize,
) -> (TokenizedText, Vec<String>) {
    let mut unknown: Vec<String> = tokenize_words(caption)
        .into_iter()
        .filter(|w| vocab.id_of(w).is_none())
        .collect();
    unknown.dedup();
    (vocab.tokenize(caption, l_max), unknown)
}

/// Tokenize one HWC frame through the frozen tokenizer.
pub fn frame_tokens(
    store: &ParamStore<f32>,
    vq: &VqVae,
    frame: &[u8],
    cfg: &ModelConfig,
) -> Result<Vec<usize>, CliError> {
    let mut clip = VideoTensor::zeros(1, cfg.image_side, cfg.image_side, cfg.image_channels);
    clip.frame_mut(0).copy_from_slice(frame);
    let arr = media::video_to_array(&clip);
    let tokens = vq.tokenize_frames(store, &arr).map_err(runtime)?;
    Ok(tokens.into_iter().map(|t| t as usize).collect())
}

/// Decode `t` frames' worth of token grids back to a pixel video.
pub fn decode_to_video(
    store: &ParamStore<f32>,
    vq: &VqVae,
    tokens: &[usize],
    t: usize,
) -> Result<VideoTensor, CliError> {
    let arr = vq.decode_tokens(store, tokens, t).map_err(runtime)?;
    media::array_to_video(&arr)
}

/// If a checkpoint was trained on different data than this run uses, stop
/// unless the caller explicitly accepted the mismatch.
pub fn check_fingerprint(
    what: &str,
    checkpoint_fp: &str,
    dataset_fp: &str,
    allow_mismatch: bool,
) -> Result<(), CliError> {
    if checkpoint_fp == dataset_fp {
        return Ok(());
    }
    if allow_mismatch {
        log::warn!(
            "{what} checkpoint fingerprint {} does not match the dataset ({}); continuing as requested",
            short_fp(checkpoint_fp),
            short_fp(dataset_fp)
        );
        return Ok(());
    }
    Err(usage(format!(
        "{what} checkpoint was trained on a different dataset (fingerprint {} vs {}); \
         pass --allow-fingerprint-mismatch to override",
        short_fp(checkpoint_fp),
        short_fp(dataset_fp)
    )))
}

/// Write `run.json` with the command name, the full resolved config, and
/// command-specific details, and mirror the config into the log stream.
pub fn write_run_log(
    out_dir: &Path,
    command: &str,
    cfg: &RunConfig,
    details: serde_json::Value,
) -> Result<PathBuf, CliError> {
    let body = serde_json::json!({
        "command": command,
        "config": cfg,
        "details": details,
    });
    log::info!("resolved config: {}", serde_json::to_string(cfg).map_err(runtime)?);
    let path = out_dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&body).map_err(runtime)?).map_err(runtime)?;
    Ok(path)
}

/// Flat batch-major tokens -> per-frame grids, for human-readable token logs.
pub fn tokens_by_frame(tokens: &[usize], tokens_per_frame: usize) -> Vec<Vec<usize>> {
    tokens.chunks(tokens_per_frame).map(|c| c.to_vec()).collect()
}

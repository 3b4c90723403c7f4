//! `evaluate`: score a trained stack on the held-out split. Deterministic
//! mode reports pixel similarity twice per sample — tokenizer reconstruction
//! and full generation — plus motion-end frames and a speed sweep; stochastic
//! mode reports per-sample diversity over repeated draws from ambiguous
//! captions.

use std::fs;
use std::path::{Path, PathBuf};

use mage_datagen::dataset::{load_video, read_manifest, split_dir, ManifestRecord};
use mage_datagen::{Split, VideoTensor};
use mage_eval::attention::attention_heatmap;
use mage_eval::metrics::{feature_diversity, pixel_diversity, psnr, ssim};
use mage_eval::motion::{detect_motion_end, script_end_frame, MotionEnd, DEFAULT_TAU_FRAC};
use mage_eval::report::{EvalReport, SampleRow};
use mage_model::train::conditioned_anchor;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{CaptionMode, RunConfig};
use crate::{runtime, usage, CliError};

use super::LoadedStack;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EvalMode {
    Deterministic,
    Stochastic,
}

impl EvalMode {
    pub fn parse(s: &str) -> Result<EvalMode, CliError> {
        match s {
            "deterministic" => Ok(EvalMode::Deterministic),
            "stochastic" => Ok(EvalMode::Stochastic),
            other => Err(usage(format!(
                "unknown mode {other:?}; expected deterministic or stochastic"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::Deterministic => "deterministic",
            EvalMode::Stochastic => "stochastic",
        }
    }
}

/// Mean detected motion-end frame for one speed setting. A clip still moving
/// at its final transition counts as ending one past the horizon (T+1), so
/// the mean stays comparable across speeds instead of silently dropping the
/// longest motions.
#[derive(Clone, Debug, Serialize)]
pub struct SpeedPoint {
    pub eta: f64,
    pub mean_end_frame: f64,
    pub clips: usize,
    pub no_end: usize,
}

pub struct EvaluateOutcome {
    pub report: EvalReport,
    pub report_json: PathBuf,
    pub report_md: PathBuf,
    pub speed_sweep: Option<Vec<SpeedPoint>>,
}

pub fn run(
    cfg: &RunConfig,
    checkpoint: &Path,
    vqvae: &Path,
    mode: EvalMode,
) -> Result<EvaluateOutcome, CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(runtime)?;
    let summary = super::load_summary(cfg)?;
    let stack = super::load_stack(checkpoint, vqvae)?;
    if stack.mage_fingerprint != summary.fingerprint {
        log::warn!(
            "checkpoint was trained on a different dataset ({} vs {})",
            super::short_fp(&stack.mage_fingerprint),
            super::short_fp(&summary.fingerprint)
        );
    }
    if mode == EvalMode::Stochastic {
        if stack.mage_cfg.deterministic {
            return Err(usage(
                "checkpoint is deterministic; stochastic evaluation needs a model trained with deterministic=false",
            ));
        }
        if cfg.caption_mode != CaptionMode::Ambiguous {
            return Err(usage(
                "ambiguous captions required for stochastic eval; set caption_mode=ambiguous",
            ));
        }
    }

    let test_dir = split_dir(&cfg.data_dir, Split::Test);
    let records = read_manifest(&test_dir).map_err(|e| usage(format!("test split: {e}")))?;
    if records.is_empty() {
        return Err(usage("test split is empty; evaluation needs held-out samples"));
    }
    let take = if cfg.eval_max_samples > 0 {
        records.len().min(cfg.eval_max_samples)
    } else {
        records.len()
    };
    let records = &records[..take];
    log::info!("evaluating {} held-out samples in {} mode", take, mode.as_str());

    let rows = match mode {
        EvalMode::Deterministic => deterministic_rows(cfg, &stack, &test_dir, records)?,
        EvalMode::Stochastic => stochastic_rows(cfg, &stack, &test_dir, records)?,
    };

    let speed_sweep = match mode {
        EvalMode::Deterministic => {
            let sweep = speed_sweep(cfg, &stack, &test_dir, records, &[0.2, 0.5, 0.8], 8)?;
            fs::write(
                cfg.out_dir.join("speed.json"),
                serde_json::to_string_pretty(&sweep).map_err(runtime)?,
            )
            .map_err(runtime)?;
            Some(sweep)
        }
        EvalMode::Stochastic => None,
    };

    let report = EvalReport::new(
        cfg.kind.as_str(),
        mode.as_str(),
        &checkpoint.display().to_string(),
        rows,
    );
    let report_json = cfg.out_dir.join("report.json");
    report.save_json(&report_json).map_err(runtime)?;
    let report_md = cfg.out_dir.join("report.md");
    fs::write(&report_md, report.to_markdown()).map_err(runtime)?;

    super::write_run_log(
        &cfg.out_dir,
        "evaluate",
        cfg,
        json!({
            "checkpoint": checkpoint,
            "vqvae": vqvae,
            "mode": mode.as_str(),
            "samples": take,
            "report": report_json,
            "aggregates": report.aggregates,
        }),
    )?;
    Ok(EvaluateOutcome { report, report_json, report_md, speed_sweep })
}

/// Reference clip for a record at this run's speed: the raw frames the
/// subsampling rule selects.
fn reference_clip(
    stack: &LoadedStack,
    test_dir: &Path,
    record: &ManifestRecord,
    eta: f64,
) -> Result<(VideoTensor, Vec<usize>), CliError> {
    let raw = load_video(test_dir, &record.id).map_err(runtime)?;
    let subsample = stack.mage_cfg.subsample_indices(eta, raw.t);
    Ok((raw.select_frames(&subsample), subsample))
}

/// Distinct, reproducible stream per (seed, sample, draw).
fn sample_rng(seed: u64, idx: usize, draw: usize) -> ChaCha8Rng {
    let salt = (idx as u64 + 1)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(draw as u64);
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

/// Roll out one greedy-or-sampled clip for a caption and first-frame tokens.
fn generate_clip(
    stack: &LoadedStack,
    caption: &mage_model::text::TokenizedText,
    z1: &[usize],
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(VideoTensor, ndarray::ArrayD<f32>), CliError> {
    let mcfg = &stack.mage_cfg;
    let (m_tilde, weights) = conditioned_anchor(
        &stack.mage_store,
        &stack.mage,
        mcfg,
        std::slice::from_ref(caption),
        z1,
        eta,
        rng,
    )
    .map_err(runtime)?;
    let greedy = mcfg.deterministic;
    let gen = stack
        .mage
        .gen
        .generate(&stack.mage_store, &m_tilde, z1, 1, mcfg.t_frames, greedy, rng)
        .map_err(runtime)?;
    let video = super::decode_to_video(&stack.vq_store, &stack.vq, &gen.tokens, mcfg.t_frames)?;
    Ok((video, weights))
}

fn deterministic_rows(
    cfg: &RunConfig,
    stack: &LoadedStack,
    test_dir: &Path,
    records: &[ManifestRecord],
) -> Result<Vec<SampleRow>, CliError> {
    let mcfg = &stack.mage_cfg;
    let hw = mcfg.tokens_per_frame();
    let mut rows = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let (reference, subsample) = reference_clip(stack, test_dir, record, cfg.eta)?;

        let ref_arr = crate::media::video_to_array(&reference);
        let ref_tokens = stack.vq.tokenize_frames(&stack.vq_store, &ref_arr).map_err(runtime)?;
        let token_ids: Vec<usize> = ref_tokens.iter().map(|&t| t as usize).collect();
        let recon = super::decode_to_video(&stack.vq_store, &stack.vq, &token_ids, reference.t)?;

        let caption_text = super::caption_of(record, cfg.caption_mode);
        let (caption, _unknown) = super::tokenize_caption(&stack.vocab, caption_text, mcfg.l_max);
        let z1 = &token_ids[..hw];
        let mut rng = sample_rng(cfg.seed, i, 0);
        let (generated, weights) = generate_clip(stack, &caption, z1, cfg.eta, &mut rng)?;

        if cfg.heatmaps && i < 4 {
            let hm = attention_heatmap(&weights, 0, 0..caption.valid_len, caption.valid_len, &record.id)
                .map_err(runtime)?;
            hm.save_overlay_png(
                reference.frame(0),
                mcfg.image_side,
                mcfg.image_channels,
                &cfg.out_dir.join(format!("heatmap_{}.png", record.id)),
            )
            .map_err(runtime)?;
        }

        rows.push(SampleRow {
            id: record.id.clone(),
            eta: Some(cfg.eta),
            psnr_tokenizer: Some(psnr(&recon, &reference).map_err(runtime)?),
            psnr_generated: Some(psnr(&generated, &reference).map_err(runtime)?),
            ssim_tokenizer: Some(ssim(&recon, &reference).map_err(runtime)?),
            ssim_generated: Some(ssim(&generated, &reference).map_err(runtime)?),
            motion_end_detected: Some(detect_motion_end(&generated, DEFAULT_TAU_FRAC)),
            motion_end_script: Some(script_end_frame(&record.script, &subsample).map_err(runtime)?),
            ..SampleRow::default()
        });
    }
    Ok(rows)
}

fn stochastic_rows(
    cfg: &RunConfig,
    stack: &LoadedStack,
    test_dir: &Path,
    records: &[ManifestRecord],
) -> Result<Vec<SampleRow>, CliError> {
    let mcfg = &stack.mage_cfg;
    let hw = mcfg.tokens_per_frame();
    let mut rows = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let (reference, _subsample) = reference_clip(stack, test_dir, record, cfg.eta)?;
        let first = crate::media::video_to_array(&reference.select_frames(&[0]));
        let z1: Vec<usize> = stack
            .vq
            .tokenize_frames(&stack.vq_store, &first)
            .map_err(runtime)?
            .into_iter()
            .map(|t| t as usize)
            .collect();
        debug_assert_eq!(z1.len(), hw);

        let caption_text = super::caption_of(record, cfg.caption_mode);
        let (caption, _unknown) = super::tokenize_caption(&stack.vocab, caption_text, mcfg.l_max);

        let mut draws = Vec::with_capacity(cfg.eval_draws);
        for d in 0..cfg.eval_draws {
            let mut rng = sample_rng(cfg.seed, i, d);
            let (video, _weights) = generate_clip(stack, &caption, &z1, cfg.eta, &mut rng)?;
            draws.push(video);
        }
        let refs: Vec<&VideoTensor> = draws.iter().collect();
        rows.push(SampleRow {
            id: record.id.clone(),
            eta: Some(cfg.eta),
            diversity_pixel: Some(pixel_diversity(&refs).map_err(runtime)?),
            diversity_feature: Some(
                feature_diversity(&refs, &stack.vq_store, &stack.vq).map_err(runtime)?,
            ),
            ..SampleRow::default()
        });
    }
    Ok(rows)
}

/// Mean detected motion-end frame per speed over the first `max_samples`
/// held-out clips, each generated fresh at that speed.
pub fn speed_sweep(
    cfg: &RunConfig,
    stack: &LoadedStack,
    test_dir: &Path,
    records: &[ManifestRecord],
    etas: &[f64],
    max_samples: usize,
) -> Result<Vec<SpeedPoint>, CliError> {
    let mcfg = &stack.mage_cfg;
    let hw = mcfg.tokens_per_frame();
    let take = records.len().min(max_samples);
    let mut points = Vec::with_capacity(etas.len());
    for &eta in etas {
        let mut ends = Vec::new();
        let mut no_end = 0usize;
        for (i, record) in records[..take].iter().enumerate() {
            let (reference, _) = reference_clip(stack, test_dir, record, eta)?;
            let ref_arr = crate::media::video_to_array(&reference);
            let tokens = stack.vq.tokenize_frames(&stack.vq_store, &ref_arr).map_err(runtime)?;
            let z1: Vec<usize> = tokens[..hw].iter().map(|&t| t as usize).collect();
            let caption_text = super::caption_of(record, cfg.caption_mode);
            let (caption, _) = super::tokenize_caption(&stack.vocab, caption_text, mcfg.l_max);
            let mut rng = sample_rng(cfg.seed, i, (eta * 1000.0) as usize);
            let (video, _) = generate_clip(stack, &caption, &z1, eta, &mut rng)?;
            match detect_motion_end(&video, DEFAULT_TAU_FRAC) {
                MotionEnd::Frame(f) => ends.push(f as f64),
                MotionEnd::NoEnd => {
                    no_end += 1;
                    ends.push((mcfg.t_frames + 1) as f64);
                }
            }
        }
        let mean_end_frame = ends.iter().sum::<f64>() / ends.len() as f64;
        points.push(SpeedPoint { eta, mean_end_frame, clips: take, no_end });
    }
    Ok(points)
}

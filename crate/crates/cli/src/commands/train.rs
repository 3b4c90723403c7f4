//! `train-vqvae` and `train-mage`: the two training stages, each producing a
//! stage-tagged checkpoint carrying the dataset fingerprint and a cumulative
//! step counter so runs can resume.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mage_datagen::dataset::{load_video, read_manifest, split_dir, ManifestRecord};
use mage_datagen::Split;
use mage_model::checkpoint::{load_checkpoint, save_checkpoint, Stage};
use mage_model::text::Vocabulary;
use mage_model::train::{
    teacher_forced_accuracy, train_mage, train_mage_steps, MageSample,
};
use mage_model::vq::{train_vqvae, train_vqvae_steps, FrameBank, VqVae};
use mage_model::ModelConfig;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use mage_autograd::ParamStore;

use crate::config::RunConfig;
use crate::media;
use crate::{runtime, usage, CliError};

pub struct TrainVqOutcome {
    pub checkpoint: PathBuf,
    /// Cumulative optimizer steps stored in the checkpoint.
    pub steps: u64,
    pub final_loss: Option<f64>,
    pub heldout_psnr: Option<f64>,
    pub heldout_clips: usize,
}

pub fn run_vqvae(
    cfg: &RunConfig,
    resume: Option<&Path>,
    allow_mismatch: bool,
) -> Result<TrainVqOutcome, CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(runtime)?;
    let summary = super::load_summary(cfg)?;
    let tcfg = cfg.vq_train_config();

    let train_dir = split_dir(&cfg.data_dir, Split::Train);
    let records = read_manifest(&train_dir).map_err(|e| usage(format!("train split: {e}")))?;
    if records.is_empty() {
        return Err(usage("train split is empty"));
    }
    let mut bank = FrameBank::new(cfg.kind.canvas(), cfg.kind.canvas(), cfg.kind.channels());
    for r in &records {
        let v = load_video(&train_dir, &r.id).map_err(runtime)?;
        for t in 0..v.t {
            bank.push_hwc(v.frame(t));
        }
    }
    log::info!("training tokenizer on {} frames from {} clips", bank.len(), records.len());

    let (store, vq, model_cfg, rows, total_steps) = match resume {
        None => {
            let model_cfg = cfg.model_config();
            let (store, vq, rows) = train_vqvae(&model_cfg, &tcfg, &bank).map_err(runtime)?;
            (store, vq, model_cfg, rows, tcfg.steps as u64)
        }
        Some(path) => {
            let ckpt = load_checkpoint(path)
                .map_err(|e| usage(format!("cannot load checkpoint {}: {e}", path.display())))?;
            ckpt.expect_stage(Stage::Tokenizer).map_err(usage)?;
            super::check_fingerprint("tokenizer", &ckpt.fingerprint, &summary.fingerprint, allow_mismatch)?;
            let model_cfg = ckpt.config.clone();
            if model_cfg.image_side != cfg.kind.canvas()
                || model_cfg.image_channels != cfg.kind.channels()
            {
                return Err(usage(format!(
                    "checkpoint expects {}x{}x{} frames, dataset provides {}x{}x{}",
                    model_cfg.image_side,
                    model_cfg.image_side,
                    model_cfg.image_channels,
                    cfg.kind.canvas(),
                    cfg.kind.canvas(),
                    cfg.kind.channels()
                )));
            }
            log::info!("resuming tokenizer from step {}", ckpt.step);
            let (mut store, vq) = ckpt.into_vqvae().map_err(runtime)?;
            // Offset the seed so the resumed run walks a fresh batch order
            // instead of replaying the original one.
            let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_add(ckpt.step));
            let rows = train_vqvae_steps(
                &model_cfg,
                &tcfg,
                &bank,
                &mut store,
                &vq,
                ckpt.step as usize,
                &mut rng,
            )
            .map_err(runtime)?;
            (store, vq, model_cfg, rows, ckpt.step + tcfg.steps as u64)
        }
    };

    write_jsonl(&cfg.out_dir.join("vqvae_loss.jsonl"), &rows)?;
    let final_loss = rows.last().map(|r| r.total);

    let test_dir = split_dir(&cfg.data_dir, Split::Test);
    let test_records = read_manifest(&test_dir).unwrap_or_default();
    let cap = if cfg.eval_max_samples > 0 { cfg.eval_max_samples } else { 25 };
    let heldout = heldout_recon_psnr(&store, &vq, &test_dir, &test_records, cap)?;
    let (heldout_psnr, heldout_clips) = match heldout {
        Some((p, n)) => (Some(p), n),
        None => (None, 0),
    };

    let ckpt_path = cfg.out_dir.join("vqvae.ckpt");
    save_checkpoint(
        &ckpt_path,
        Stage::Tokenizer,
        &model_cfg,
        &summary.fingerprint,
        total_steps,
        None,
        &store,
    )
    .map_err(runtime)?;

    super::write_run_log(
        &cfg.out_dir,
        "train-vqvae",
        cfg,
        json!({
            "checkpoint": ckpt_path,
            "steps": total_steps,
            "final_loss": final_loss,
            "heldout_psnr_db": heldout_psnr,
            "heldout_clips": heldout_clips,
            "dataset_fingerprint": summary.fingerprint,
            "resumed_from": resume.map(|p| p.display().to_string()),
        }),
    )?;
    Ok(TrainVqOutcome { checkpoint: ckpt_path, steps: total_steps, final_loss, heldout_psnr, heldout_clips })
}

/// Mean tokenizer-reconstruction PSNR over up to `cap` held-out clips.
fn heldout_recon_psnr(
    store: &ParamStore<f32>,
    vq: &VqVae,
    test_dir: &Path,
    records: &[ManifestRecord],
    cap: usize,
) -> Result<Option<(f64, usize)>, CliError> {
    let take = records.len().min(cap);
    if take == 0 {
        return Ok(None);
    }
    let values = mage_eval::map_samples(&records[..take], |_, r| -> Result<f64, String> {
        let v = load_video(test_dir, &r.id).map_err(|e| e.to_string())?;
        let arr = media::video_to_array(&v);
        let tokens = vq.tokenize_frames(store, &arr).map_err(|e| e.to_string())?;
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let dec = vq.decode_tokens(store, &ids, v.t).map_err(|e| e.to_string())?;
        let recon = media::array_to_video(&dec).map_err(|e| e.to_string())?;
        mage_eval::metrics::psnr(&recon, &v).map_err(|e| e.to_string())
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_, _>>().map_err(runtime)?;
    Ok(Some((values.iter().sum::<f64>() / values.len() as f64, take)))
}

pub struct TrainMageOutcome {
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub vocab_size: usize,
    pub heldout_token_accuracy: Option<f64>,
    pub heldout_samples: usize,
}

pub fn run_mage(
    cfg: &RunConfig,
    vqvae: &Path,
    resume: Option<&Path>,
    allow_mismatch: bool,
) -> Result<TrainMageOutcome, CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(runtime)?;
    let summary = super::load_summary(cfg)?;
    let tcfg = cfg.mage_train_config();

    let vq_ckpt = load_checkpoint(vqvae)
        .map_err(|e| usage(format!("cannot load tokenizer checkpoint {}: {e}", vqvae.display())))?;
    vq_ckpt.expect_stage(Stage::Tokenizer).map_err(usage)?;
    super::check_fingerprint("tokenizer", &vq_ckpt.fingerprint, &summary.fingerprint, allow_mismatch)?;
    let (vq_store, vq) = vq_ckpt.into_vqvae().map_err(runtime)?;

    let train_dir = split_dir(&cfg.data_dir, Split::Train);
    let test_dir = split_dir(&cfg.data_dir, Split::Test);
    let train_records = read_manifest(&train_dir).map_err(|e| usage(format!("train split: {e}")))?;
    if train_records.is_empty() {
        return Err(usage("train split is empty"));
    }
    let test_records = read_manifest(&test_dir).unwrap_or_default();

    let resume_ckpt = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)
                .map_err(|e| usage(format!("cannot load checkpoint {}: {e}", path.display())))?;
            ckpt.expect_stage(Stage::Generator).map_err(usage)?;
            super::check_fingerprint("generator", &ckpt.fingerprint, &summary.fingerprint, allow_mismatch)?;
            ckpt.config.compatible_tokenizer(&vq_ckpt.config).map_err(|m| {
                usage(format!("resumed generator incompatible with the tokenizer checkpoint: {m}"))
            })?;
            Some(ckpt)
        }
        None => None,
    };

    // The vocabulary covers both caption styles of both splits, so evaluation
    // on held-out ambiguous captions never hits unknown words. Resumed runs
    // keep the checkpoint's vocabulary and architecture verbatim.
    let (model_cfg, vocab, start_step) = match &resume_ckpt {
        None => {
            let mut model_cfg = cfg.model_config();
            model_cfg.compatible_tokenizer(&vq_ckpt.config).map_err(|m| {
                usage(format!("generator config incompatible with the tokenizer checkpoint: {m}"))
            })?;
            let vocab = build_vocabulary(&train_records, &test_records)?;
            model_cfg.vocab_size = vocab.size();
            (model_cfg, vocab, 0u64)
        }
        Some(ckpt) => {
            let vocab = ckpt
                .vocab
                .clone()
                .ok_or_else(|| usage("generator checkpoint lacks a vocabulary"))?;
            log::info!("resuming generator from step {}", ckpt.step);
            (ckpt.config.clone(), vocab, ckpt.step)
        }
    };

    log::info!("tokenizing {} training clips through the frozen tokenizer", train_records.len());
    let samples = tokenize_samples(&train_records, &train_dir, &vq_store, &vq, &vocab, cfg, &model_cfg)?;

    let (store, mage, rows) = match &resume_ckpt {
        None => train_mage(&model_cfg, &tcfg, &samples).map_err(runtime)?,
        Some(ckpt) => {
            let (mut store, mage, _vocab) = ckpt.into_mage().map_err(runtime)?;
            // Offset the seed so the resumed run walks a fresh batch order
            // instead of replaying the original one.
            let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_add(start_step));
            let rows = train_mage_steps(
                &model_cfg,
                &tcfg,
                &samples,
                &mut store,
                &mage,
                start_step as usize,
                &mut rng,
            )
            .map_err(runtime)?;
            (store, mage, rows)
        }
    };
    let total_steps = start_step + tcfg.steps as u64;

    write_jsonl(&cfg.out_dir.join("mage_loss.jsonl"), &rows)?;

    let acc_cap = if cfg.eval_max_samples > 0 { cfg.eval_max_samples } else { 64 };
    let heldout_take = test_records.len().min(acc_cap);
    let heldout_token_accuracy = if heldout_take > 0 {
        let heldout = tokenize_samples(
            &test_records[..heldout_take],
            &test_dir,
            &vq_store,
            &vq,
            &vocab,
            cfg,
            &model_cfg,
        )?;
        Some(
            teacher_forced_accuracy(&store, &mage, &model_cfg, &heldout, cfg.eta)
                .map_err(runtime)?,
        )
    } else {
        None
    };

    let ckpt_path = cfg.out_dir.join("mage.ckpt");
    save_checkpoint(
        &ckpt_path,
        Stage::Generator,
        &model_cfg,
        &summary.fingerprint,
        total_steps,
        Some(&vocab),
        &store,
    )
    .map_err(runtime)?;

    super::write_run_log(
        &cfg.out_dir,
        "train-mage",
        cfg,
        json!({
            "checkpoint": ckpt_path,
            "tokenizer": vqvae.display().to_string(),
            "steps": total_steps,
            "vocab_size": vocab.size(),
            "final_loss": rows.last().map(|r| r.total),
            "heldout_token_accuracy": heldout_token_accuracy,
            "heldout_samples": heldout_take,
            "dataset_fingerprint": summary.fingerprint,
            "resumed_from": resume.map(|p| p.display().to_string()),
        }),
    )?;
    Ok(TrainMageOutcome {
        checkpoint: ckpt_path,
        steps: total_steps,
        vocab_size: vocab.size(),
        heldout_token_accuracy,
        heldout_samples: heldout_take,
    })
}

fn build_vocabulary(
    train: &[ManifestRecord],
    test: &[ManifestRecord],
) -> Result<Vocabulary, CliError> {
    let corpus: Vec<&str> = train
        .iter()
        .chain(test.iter())
        .flat_map(|r| [r.explicit_caption.as_str(), r.ambiguous_caption.as_str()])
        .collect();
    Vocabulary::build(corpus).map_err(runtime)
}

/// Load each clip, tokenize every raw frame through the frozen tokenizer,
/// and pair it with its tokenized caption.
#[allow(clippy::too_many_arguments)]
fn tokenize_samples(
    records: &[ManifestRecord],
    dir: &Path,
    vq_store: &ParamStore<f32>,
    vq: &VqVae,
    vocab: &Vocabulary,
    cfg: &RunConfig,
    model_cfg: &ModelConfig,
) -> Result<Vec<MageSample>, CliError> {
    let results = mage_eval::map_samples(records, |_, r| -> Result<MageSample, String> {
        let v = load_video(dir, &r.id).map_err(|e| e.to_string())?;
        let arr = media::video_to_array(&v);
        let frame_tokens = vq.tokenize_frames(vq_store, &arr).map_err(|e| e.to_string())?;
        let caption = vocab.tokenize(super::caption_of(r, cfg.caption_mode), model_cfg.l_max);
        Ok(MageSample { frame_tokens, raw_frames: v.t, caption })
    });
    results.into_iter().collect::<Result<Vec<_>, _>>().map_err(runtime)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(runtime)?);
    for row in rows {
        serde_json::to_writer(&mut f, row).map_err(runtime)?;
        writeln!(f).map_err(runtime)?;
    }
    Ok(())
}

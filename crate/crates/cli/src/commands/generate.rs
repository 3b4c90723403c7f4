//! `generate`: roll out video clips from a first frame and a caption.
//! Deterministic checkpoints decode greedily and force a single sample;
//! stochastic ones draw a fresh implicit-randomness vector per sample and
//! sample every token from its categorical scores.

use std::fs;
use std::path::PathBuf;

use mage_model::train::conditioned_anchor;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::media;
use crate::{runtime, CliError};

pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    pub vqvae: PathBuf,
    pub image: PathBuf,
    pub caption: String,
}

pub struct GenerateOutcome {
    pub clips: Vec<PathBuf>,
    pub unknown_words: Vec<String>,
    pub n_samples: usize,
    pub frame_ms: u32,
    pub deterministic: bool,
}

pub fn run(cfg: &RunConfig, args: &GenerateArgs) -> Result<GenerateOutcome, CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(runtime)?;
    let stack = super::load_stack(&args.checkpoint, &args.vqvae)?;
    let mcfg = &stack.mage_cfg;
    let deterministic = mcfg.deterministic;
    if cfg.deterministic != deterministic {
        log::warn!(
            "sampling mode is fixed by the checkpoint ({})",
            if deterministic { "deterministic" } else { "stochastic" }
        );
    }

    let frame = media::load_png_frame(&args.image, mcfg.image_side, mcfg.image_channels)?;
    let z1 = super::frame_tokens(&stack.vq_store, &stack.vq, &frame, mcfg)?;

    let (caption_tok, unknown_words) = super::tokenize_caption(&stack.vocab, &args.caption, mcfg.l_max);
    for w in &unknown_words {
        log::warn!("caption word {w:?} is outside the vocabulary; substituting the unknown token");
    }

    let n_samples = if deterministic && cfg.n_samples != 1 {
        log::warn!("deterministic mode forces n-samples=1 (requested {})", cfg.n_samples);
        1
    } else if deterministic {
        1
    } else {
        cfg.n_samples
    };

    // One stream drives every sample, so rerunning the command reproduces
    // all of them while consecutive samples still draw distinct randomness.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frame_ms = (mcfg.interval(cfg.eta) * media::RAW_FRAME_MS).round() as u32;
    let mut clips = Vec::with_capacity(n_samples);
    let mut token_log = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let (m_tilde, _weights) = conditioned_anchor(
            &stack.mage_store,
            &stack.mage,
            mcfg,
            std::slice::from_ref(&caption_tok),
            &z1,
            cfg.eta,
            &mut rng,
        )
        .map_err(runtime)?;
        let gen = stack
            .mage
            .gen
            .generate(&stack.mage_store, &m_tilde, &z1, 1, mcfg.t_frames, deterministic, &mut rng)
            .map_err(runtime)?;
        let video = super::decode_to_video(&stack.vq_store, &stack.vq, &gen.tokens, mcfg.t_frames)?;
        let gif = cfg.out_dir.join(format!("sample_{k}.gif"));
        media::save_gif(&gif, &video, frame_ms)?;
        media::save_frame_strip(&cfg.out_dir.join(format!("sample_{k}.png")), &video)?;
        token_log.push(json!({
            "sample": k,
            "frames": super::tokens_by_frame(&gen.tokens, mcfg.tokens_per_frame()),
        }));
        clips.push(gif);
    }
    fs::write(
        cfg.out_dir.join("tokens.json"),
        serde_json::to_string_pretty(&token_log).map_err(runtime)?,
    )
    .map_err(runtime)?;

    super::write_run_log(
        &cfg.out_dir,
        "generate",
        cfg,
        json!({
            "checkpoint": args.checkpoint,
            "vqvae": args.vqvae,
            "image": args.image,
            "caption": args.caption,
            "unknown_words": unknown_words,
            "n_samples": n_samples,
            "frame_ms": frame_ms,
            "deterministic": deterministic,
            "clips": clips,
        }),
    )?;
    Ok(GenerateOutcome { clips, unknown_words, n_samples, frame_ms, deterministic })
}

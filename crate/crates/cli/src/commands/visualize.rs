//! `visualize-attention`: export the caption-to-frame cross-attention of the
//! motion anchor as heatmap overlays — one for the whole caption and one per
//! word — plus the raw values as JSON.

use std::fs;
use std::path::PathBuf;

use mage_eval::attention::attention_heatmap;
use mage_model::train::conditioned_anchor;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::media;
use crate::{runtime, CliError};

pub struct VisualizeArgs {
    pub checkpoint: PathBuf,
    pub vqvae: PathBuf,
    pub image: PathBuf,
    pub caption: String,
}

pub struct VisualizeOutcome {
    pub overlays: Vec<PathBuf>,
    pub values_json: PathBuf,
}

pub fn run(cfg: &RunConfig, args: &VisualizeArgs) -> Result<VisualizeOutcome, CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(runtime)?;
    let stack = super::load_stack(&args.checkpoint, &args.vqvae)?;
    let mcfg = &stack.mage_cfg;

    let frame = media::load_png_frame(&args.image, mcfg.image_side, mcfg.image_channels)?;
    let z1 = super::frame_tokens(&stack.vq_store, &stack.vq, &frame, mcfg)?;
    let (caption_tok, unknown) = super::tokenize_caption(&stack.vocab, &args.caption, mcfg.l_max);
    for w in &unknown {
        log::warn!("caption word {w:?} is outside the vocabulary; substituting the unknown token");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (_m_tilde, weights) = conditioned_anchor(
        &stack.mage_store,
        &stack.mage,
        mcfg,
        std::slice::from_ref(&caption_tok),
        &z1,
        cfg.eta,
        &mut rng,
    )
    .map_err(runtime)?;

    let valid = caption_tok.valid_len;
    let words: Vec<String> =
        caption_tok.ids[..valid].iter().map(|&id| stack.vocab.word_for(id).to_string()).collect();

    let mut overlays = Vec::new();
    let mut values = Vec::new();

    let full = attention_heatmap(&weights, 0, 0..valid, valid, "caption").map_err(runtime)?;
    let full_path = cfg.out_dir.join("attention_full.png");
    full.save_overlay_png(&frame, mcfg.image_side, mcfg.image_channels, &full_path)
        .map_err(runtime)?;
    values.push(json!({ "span": "caption", "values": full.values }));
    overlays.push(full_path);

    for (k, word) in words.iter().enumerate() {
        let hm = attention_heatmap(&weights, 0, k..k + 1, valid, word).map_err(runtime)?;
        let safe: String =
            word.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
        let path = cfg.out_dir.join(format!("attention_w{k:02}_{safe}.png"));
        hm.save_overlay_png(&frame, mcfg.image_side, mcfg.image_channels, &path)
            .map_err(runtime)?;
        values.push(json!({ "span": word, "position": k, "values": hm.values }));
        overlays.push(path);
    }

    let values_json = cfg.out_dir.join("attention.json");
    fs::write(
        &values_json,
        serde_json::to_string_pretty(&json!({
            "caption": args.caption,
            "words": words,
            "grid_side": mcfg.token_side(),
            "maps": values,
        }))
        .map_err(runtime)?,
    )
    .map_err(runtime)?;

    super::write_run_log(
        &cfg.out_dir,
        "visualize-attention",
        cfg,
        json!({
            "checkpoint": args.checkpoint,
            "vqvae": args.vqvae,
            "image": args.image,
            "caption": args.caption,
            "unknown_words": unknown,
            "overlays": overlays,
        }),
    )?;
    Ok(VisualizeOutcome { overlays, values_json })
}

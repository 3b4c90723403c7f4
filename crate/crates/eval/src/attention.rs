//! Cross-attention heatmaps: where on the first frame's token grid does the
//! motion anchor look when reading a given phrase of the caption?

use crate::EvalError;
use image::{Rgb, RgbImage};
use mage_datagen::sampler::{grid_to_px, CELL_PX};
use mage_datagen::types::{SceneScript, StartPosition};
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::path::Path;

/// Head-averaged attention mass each grid cell assigns to a caption phrase.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionHeatmap {
    pub sample_id: String,
    /// Token span of the phrase within the caption, `[start, end)`.
    pub span: (usize, usize),
    /// Grid edge; maps carry `side²` cells in row-major order.
    pub side: usize,
    /// Raw span-summed weights per cell, each in [0, 1]. A span covering the
    /// whole valid caption makes every entry exactly the row sum (1).
    pub raw: Vec<f64>,
    /// Min-max renormalized copy of `raw` for display; constant maps render
    /// at full intensity.
    pub values: Vec<f64>,
}

/// Build a heatmap from raw per-head attention weights `[B, heads, h·w, L]`
/// (as produced while constructing the motion anchor).
pub fn attention_heatmap(
    weights: &ArrayD<f32>,
    batch_idx: usize,
    span: Range<usize>,
    valid_len: usize,
    sample_id: &str,
) -> Result<AttentionHeatmap, EvalError> {
    let sh = weights.shape();
    if sh.len() != 4 {
        return Err(EvalError::Shape(format!("expected [B, heads, hw, L], got {sh:?}")));
    }
    let (b, heads, hw, l) = (sh[0], sh[1], sh[2], sh[3]);
    if batch_idx >= b {
        return Err(EvalError::Input(format!("batch index {batch_idx} out of {b}")));
    }
    if valid_len == 0 || valid_len > l {
        return Err(EvalError::Input(format!("valid length {valid_len} out of 1..={l}")));
    }
    if span.is_empty() || span.end > valid_len {
        return Err(EvalError::Input(format!(
            "span {span:?} outside the caption's {valid_len} valid tokens"
        )));
    }
    let side = (hw as f64).sqrt() as usize;
    if side * side != hw {
        return Err(EvalError::Shape(format!("{hw} cells is not a square grid")));
    }
    let mut raw = vec![0.0f64; hw];
    for (cell, slot) in raw.iter_mut().enumerate() {
        let mut acc = 0.0;
        for head in 0..heads {
            for tok in span.clone() {
                acc += weights[[batch_idx, head, cell, tok]] as f64;
            }
        }
        *slot = acc / heads as f64;
    }
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values = if hi - lo > 1e-12 {
        raw.iter().map(|&v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; hw]
    };
    Ok(AttentionHeatmap { sample_id: sample_id.to_string(), span: (span.start, span.end), side, raw, values })
}

impl AttentionHeatmap {
    /// Blend the heatmap over a first frame (`[h·w·c]`, 8-bit) and write a
    /// PNG. Grid cells are upscaled to the canvas by nearest neighbor and
    /// tinted red in proportion to their display value.
    pub fn save_overlay_png(
        &self,
        frame: &[u8],
        canvas: usize,
        channels: usize,
        path: &Path,
    ) -> Result<(), EvalError> {
        if frame.len() != canvas * canvas * channels {
            return Err(EvalError::Shape(format!(
                "frame of {} bytes is not {canvas}×{canvas}×{channels}",
                frame.len()
            )));
        }
        if canvas % self.side != 0 {
            return Err(EvalError::Shape(format!(
                "canvas {canvas} not divisible by grid side {}",
                self.side
            )));
        }
        let scale = canvas / self.side;
        let mut img = RgbImage::new(canvas as u32, canvas as u32);
        for y in 0..canvas {
            for x in 0..canvas {
                let base = match channels {
                    1 => {
                        let v = frame[y * canvas + x];
                        [v, v, v]
                    }
                    _ => {
                        let i = (y * canvas + x) * channels;
                        [frame[i], frame[i + 1], frame[i + 2]]
                    }
                };
                let heat = self.values[(y / scale) * self.side + x / scale];
                let a = 0.55 * heat;
                let px = [
                    (base[0] as f64 * (1.0 - a) + 255.0 * a) as u8,
                    (base[1] as f64 * (1.0 - a)) as u8,
                    (base[2] as f64 * (1.0 - a)) as u8,
                ];
                img.put_pixel(x as u32, y as u32, Rgb(px));
            }
        }
        img.save(path)?;
        Ok(())
    }

    /// Fraction of the map's mass that falls on `mask` cells, and the IoU of
    /// the thresholded map against the mask.
    pub fn mask_agreement(&self, mask: &[bool], threshold: f64) -> Result<(f64, f64), EvalError> {
        if mask.len() != self.raw.len() {
            return Err(EvalError::Shape("mask/grid size mismatch".into()));
        }
        let total: f64 = self.raw.iter().sum();
        if total <= 0.0 {
            return Err(EvalError::Input("empty attention map".into()));
        }
        let on_mask: f64 = self.raw.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum();
        let mut inter = 0usize;
        let mut union = 0usize;
        for (v, &m) in self.values.iter().zip(mask) {
            let hot = *v >= threshold;
            if hot && m {
                inter += 1;
            }
            if hot || m {
                union += 1;
            }
        }
        let iou = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
        Ok((on_mask / total, iou))
    }
}

/// Grid cells (row-major, `side²` entries) covered by an object's footprint
/// at the start of a tabletop clip: the oracle for attention localization.
pub fn object_grid_mask(script: &SceneScript, object_id: u32, side: usize) -> Vec<bool> {
    let obj = script.object(object_id);
    let (cx, cy) = match obj.start {
        StartPosition::Grid(g) => grid_to_px(g),
        StartPosition::Pixel { x, y } => (x, y),
    };
    let radius = obj.size.radius_px() * 1.3 + CELL_PX * 0.25;
    let canvas = script.kind.canvas() as f64;
    let cell = canvas / side as f64;
    let mut mask = vec![false; side * side];
    for (i, m) in mask.iter_mut().enumerate() {
        let px = ((i % side) as f64 + 0.5) * cell;
        let py = ((i / side) as f64 + 0.5) * cell;
        let d2 = (px - cx as f64).powi(2) + (py - cy as f64).powi(2);
        *m = d2.sqrt() <= radius as f64 + cell * 0.5;
    }
    mask
}

//! Pixel plumbing shared by the subcommands: video tensors to and from float
//! arrays, single-frame PNG I/O, animated GIF export, and frame strips.

use std::fs;
use std::path::Path;

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, DynamicImage, Frame, GrayImage, RgbImage, RgbaImage};
use mage_datagen::VideoTensor;
use ndarray::{ArrayD, IxDyn};

use crate::{runtime, usage, CliError};

/// Raw clips play at 20 fps; subsampling by `interval` stretches each shown
/// frame accordingly, so perceived speed in exported GIFs tracks the speed
/// condition.
pub const RAW_FRAME_MS: f64 = 50.0;

/// HWC bytes -> [T, C, H, W] floats in [0, 1].
pub fn video_to_array(video: &VideoTensor) -> ArrayD<f32> {
    let (t, h, w, c) = (video.t, video.h, video.w, video.c);
    let mut arr = ArrayD::zeros(IxDyn(&[t, c, h, w]));
    for ti in 0..t {
        let frame = video.frame(ti);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    arr[[ti, ch, y, x]] = frame[(y * w + x) * c + ch] as f32 / 255.0;
                }
            }
        }
    }
    arr
}

/// [T, C, H, W] floats -> HWC bytes, clamped to [0, 1] and rounded.
pub fn array_to_video(arr: &ArrayD<f32>) -> Result<VideoTensor, CliError> {
    let shape = arr.shape();
    if shape.len() != 4 {
        return Err(runtime(format!("expected a [T, C, H, W] array, got shape {shape:?}")));
    }
    let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let mut video = VideoTensor::zeros(t, h, w, c);
    for ti in 0..t {
        let frame = video.frame_mut(ti);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = arr[[ti, ch, y, x]].clamp(0.0, 1.0);
                    frame[(y * w + x) * c + ch] = (v * 255.0).round() as u8;
                }
            }
        }
    }
    Ok(video)
}

/// Load a PNG as one HWC frame, insisting on the model's exact geometry.
/// Grayscale models accept color input by luma conversion, but never the
/// reverse, and the canvas size must match.
pub fn load_png_frame(path: &Path, side: usize, channels: usize) -> Result<Vec<u8>, CliError> {
    let img = image::open(path)
        .map_err(|e| usage(format!("cannot read image {}: {e}", path.display())))?;
    if img.width() as usize != side || img.height() as usize != side {
        return Err(usage(format!(
            "image {} is {}x{}, model expects {side}x{side}",
            path.display(),
            img.width(),
            img.height()
        )));
    }
    match channels {
        1 => Ok(img.to_luma8().into_raw()),
        3 => {
            if matches!(img, DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_)) {
                return Err(usage(format!(
                    "image {} is grayscale, model expects 3 channels",
                    path.display()
                )));
            }
            Ok(img.to_rgb8().into_raw())
        }
        _ => Err(runtime(format!("unsupported channel count {channels}"))),
    }
}

pub fn save_png_frame(
    path: &Path,
    frame: &[u8],
    h: usize,
    w: usize,
    c: usize,
) -> Result<(), CliError> {
    let err = || runtime(format!("frame buffer does not match {w}x{h}x{c}"));
    match c {
        1 => GrayImage::from_raw(w as u32, h as u32, frame.to_vec())
            .ok_or_else(err)?
            .save(path)
            .map_err(runtime),
        3 => RgbImage::from_raw(w as u32, h as u32, frame.to_vec())
            .ok_or_else(err)?
            .save(path)
            .map_err(runtime),
        _ => Err(runtime(format!("unsupported channel count {c}"))),
    }
}

fn frame_to_rgba(frame: &[u8], h: usize, w: usize, c: usize) -> Result<RgbaImage, CliError> {
    let mut rgba = Vec::with_capacity(h * w * 4);
    for px in 0..h * w {
        let (r, g, b) = match c {
            1 => (frame[px], frame[px], frame[px]),
            3 => (frame[px * 3], frame[px * 3 + 1], frame[px * 3 + 2]),
            _ => return Err(runtime(format!("unsupported channel count {c}"))),
        };
        rgba.extend_from_slice(&[r, g, b, 255]);
    }
    RgbaImage::from_raw(w as u32, h as u32, rgba)
        .ok_or_else(|| runtime("rgba buffer size mismatch"))
}

/// Write an infinitely looping GIF at source resolution with a uniform
/// per-frame duration in milliseconds.
pub fn save_gif(path: &Path, video: &VideoTensor, frame_ms: u32) -> Result<(), CliError> {
    let file = fs::File::create(path)
        .map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))?;
    let mut enc = GifEncoder::new(std::io::BufWriter::new(file));
    enc.set_repeat(Repeat::Infinite).map_err(runtime)?;
    for t in 0..video.t {
        let rgba = frame_to_rgba(video.frame(t), video.h, video.w, video.c)?;
        let delay = Delay::from_numer_denom_ms(frame_ms, 1);
        enc.encode_frame(Frame::from_parts(rgba, 0, 0, delay)).map_err(runtime)?;
    }
    Ok(())
}

/// All frames side by side in one PNG, for quick visual diffing without a
/// GIF viewer.
pub fn save_frame_strip(path: &Path, video: &VideoTensor) -> Result<(), CliError> {
    let (t, h, w, c) = (video.t, video.h, video.w, video.c);
    let mut strip = vec![0u8; h * t * w * c];
    for ti in 0..t {
        let frame = video.frame(ti);
        for y in 0..h {
            let dst = (y * t * w + ti * w) * c;
            let src = y * w * c;
            strip[dst..dst + w * c].copy_from_slice(&frame[src..src + w * c]);
        }
    }
    save_png_frame(path, &strip, h, t * w, c)
}

//! Pixel-similarity and diversity metrics over 8-bit videos.

use crate::EvalError;
use mage_autograd::params::ParamStore;
use mage_autograd::tape::Tape;
use mage_datagen::types::VideoTensor;
use mage_model::vq::{FrameBank, VqVae};

/// Reported instead of infinity when two videos are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

fn check_same_shape(x: &VideoTensor, y: &VideoTensor) -> Result<(), EvalError> {
    if (x.t, x.h, x.w, x.c) != (y.t, y.h, y.w, y.c) {
        return Err(EvalError::Shape(format!(
            "video shapes differ: [{},{},{},{}] vs [{},{},{},{}]",
            x.t, x.h, x.w, x.c, y.t, y.h, y.w, y.c
        )));
    }
    if x.t == 0 {
        return Err(EvalError::Shape("empty video".into()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB: 10·log10(255²/MSE) computed per frame
/// and averaged, with each frame capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &VideoTensor, y: &VideoTensor) -> Result<f64, EvalError> {
    check_same_shape(x, y)?;
    let mut total = 0.0;
    for t in 0..x.t {
        let (a, b) = (x.frame(t), y.frame(t));
        let mse = a
            .iter()
            .zip(b)
            .map(|(&p, &q)| {
                let d = p as f64 - q as f64;
                d * d
            })
            .sum::<f64>()
            / a.len() as f64;
        let db = if mse == 0.0 { PSNR_CAP_DB } else { 10.0 * (255.0 * 255.0 / mse).log10() };
        total += db.min(PSNR_CAP_DB);
    }
    Ok(total / x.t as f64)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for r in 0..SSIM_WINDOW {
        for k in 0..SSIM_WINDOW {
            let dr = r as f64 - c;
            let dk = k as f64 - c;
            let v = (-(dr * dr + dk * dk) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[r * SSIM_WINDOW + k] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Luma plane of one frame in 0..255 (Rec.601 weights for color input).
pub fn luma(frame: &[u8], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    match c {
        1 => out.extend(frame.iter().map(|&v| v as f64)),
        3 => {
            for px in frame.chunks_exact(3) {
                out.push(0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64);
            }
        }
        other => panic!("unsupported channel count {other}"),
    }
    out
}

/// Structural similarity: Gaussian-weighted 11×11 windows at every valid
/// position of the luma plane, frame-averaged. Returns a value in [−1, 1].
pub fn ssim(x: &VideoTensor, y: &VideoTensor) -> Result<f64, EvalError> {
    check_same_shape(x, y)?;
    if x.h < SSIM_WINDOW || x.w < SSIM_WINDOW {
        return Err(EvalError::Shape(format!(
            "frames {}×{} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window",
            x.h, x.w
        )));
    }
    let win = gaussian_window();
    let mut total = 0.0;
    for t in 0..x.t {
        let a = luma(x.frame(t), x.h, x.w, x.c);
        let b = luma(y.frame(t), y.h, y.w, y.c);
        total += ssim_plane(&a, &b, x.h, x.w, &win);
    }
    Ok(total / x.t as f64)
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, win: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for top in 0..=h - SSIM_WINDOW {
        for left in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in 0..SSIM_WINDOW {
                for k in 0..SSIM_WINDOW {
                    let g = win[r * SSIM_WINDOW + k];
                    let pa = a[(top + r) * w + left + k];
                    let pb = b[(top + r) * w + left + k];
                    mx += g * pa;
                    my += g * pb;
                    mxx += g * pa * pa;
                    myy += g * pb * pb;
                    mxy += g * pa * pb;
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let cov = mxy - mx * my;
            sum += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    sum / count as f64
}

fn check_diversity_input(videos: &[&VideoTensor]) -> Result<(), EvalError> {
    if videos.len() < 2 {
        return Err(EvalError::Input(format!(
            "diversity needs at least 2 videos, got {}",
            videos.len()
        )));
    }
    for v in &videos[1..] {
        check_same_shape(videos[0], v)?;
    }
    Ok(())
}

fn mean_pairwise<FDist: Fn(usize, usize) -> f64>(n: usize, dist: FDist) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += dist(i, j);
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Mean pairwise root-mean-square pixel distance in [0, 1] units. Zero iff
/// all videos are byte-identical; invariant to input order.
pub fn pixel_diversity(videos: &[&VideoTensor]) -> Result<f64, EvalError> {
    check_diversity_input(videos)?;
    Ok(mean_pairwise(videos.len(), |i, j| {
        let (a, b) = (&videos[i].data, &videos[j].data);
        let ss: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(&p, &q)| {
                let d = (p as f64 - q as f64) / 255.0;
                d * d
            })
            .sum();
        (ss / a.len() as f64).sqrt()
    }))
}

/// Mean pairwise RMS distance between pre-quantization tokenizer latents:
/// the in-house stand-in for a pretrained perceptual feature space.
pub fn feature_diversity(
    videos: &[&VideoTensor],
    store: &ParamStore<f32>,
    vq: &VqVae,
) -> Result<f64, EvalError> {
    check_diversity_input(videos)?;
    let feats: Vec<Vec<f32>> = videos
        .iter()
        .map(|v| video_features(v, store, vq))
        .collect::<Result<_, _>>()?;
    Ok(mean_pairwise(videos.len(), |i, j| {
        let (a, b) = (&feats[i], &feats[j]);
        let ss: f64 = a
            .iter()
            .zip(b.iter())
            .map(|(&p, &q)| {
                let d = (p - q) as f64;
                d * d
            })
            .sum();
        (ss / a.len() as f64).sqrt()
    }))
}

/// Encoder latents (before quantization) for every frame, flattened.
fn video_features(
    video: &VideoTensor,
    store: &ParamStore<f32>,
    vq: &VqVae,
) -> Result<Vec<f32>, EvalError> {
    let mut bank = FrameBank::new(video.h, video.w, video.c);
    for t in 0..video.t {
        bank.push_hwc(video.frame(t));
    }
    let mut out = Vec::new();
    let all: Vec<usize> = (0..video.t).collect();
    for chunk in all.chunks(8) {
        let tape = Tape::<f32>::new();
        let bp = store.bind_frozen(&tape);
        let pre = vq.encode(&tape, &bp, tape.constant(bank.batch(chunk)))?;
        out.extend(tape.value(pre).iter().copied());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mage_datagen::types::DatasetKind;
    use mage_model::config::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn video_from(t: usize, h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize) -> u8) -> VideoTensor {
        let mut v = VideoTensor::zeros(t, h, w, c);
        for ti in 0..t {
            let frame = v.frame_mut(ti);
            for (i, px) in frame.iter_mut().enumerate() {
                *px = f(ti, i);
            }
        }
        v
    }

    #[test]
    fn psnr_identity_cap_uniform_offset_and_symmetry() {
        let x = video_from(3, 16, 16, 1, |t, i| ((t * 31 + i * 7) % 251) as u8);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);

        // Uniform |difference| of exactly 1 → 20·log10(255).
        let y = video_from(3, 16, 16, 1, |t, i| ((t * 31 + i * 7) % 251) as u8 + 1);
        let want = 20.0 * 255.0f64.log10();
        let got = psnr(&x, &y).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        assert!((got - 48.13).abs() < 0.005);

        assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());

        let z = video_from(2, 16, 16, 1, |_, _| 0);
        assert!(psnr(&x, &z).is_err(), "shape mismatch must error");
    }

    /// Independent nested-loop window computation (no shared code with the
    /// implementation's accumulation order).
    fn ssim_oracle_16(a: &[u8], b: &[u8]) -> f64 {
        let c = (0.01f64 * 255.0).powi(2);
        let c2 = (0.03f64 * 255.0).powi(2);
        let mut kernel = vec![];
        for r in 0..11 {
            for k in 0..11 {
                let (dr, dk) = (r as f64 - 5.0, k as f64 - 5.0);
                kernel.push((-(dr * dr + dk * dk) / 4.5).exp());
            }
        }
        let ksum: f64 = kernel.iter().sum();
        let mut vals = vec![];
        for top in 0..6 {
            for left in 0..6 {
                let (mut mx, mut my) = (0.0, 0.0);
                for r in 0..11 {
                    for k in 0..11 {
                        let g = kernel[r * 11 + k] / ksum;
                        mx += g * a[(top + r) * 16 + left + k] as f64;
                        my += g * b[(top + r) * 16 + left + k] as f64;
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for r in 0..11 {
                    for k in 0..11 {
                        let g = kernel[r * 11 + k] / ksum;
                        let da = a[(top + r) * 16 + left + k] as f64 - mx;
                        let db = b[(top + r) * 16 + left + k] as f64 - my;
                        vx += g * da * da;
                        vy += g * db * db;
                        cov += g * da * db;
                    }
                }
                vals.push(
                    ((2.0 * mx * my + c) * (2.0 * cov + c2))
                        / ((mx * mx + my * my + c) * (vx + vy + c2)),
                );
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn ssim_matches_bruteforce_windows_and_flags_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Binary image (no mid-gray): inversion must score strongly negative.
        let x = video_from(1, 16, 16, 1, |_, _| if rng.gen_bool(0.5) { 255 } else { 0 });
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);

        let inv = video_from(1, 16, 16, 1, |_, i| 255 - x.frame(0)[i]);
        let got = ssim(&x, &inv).unwrap();
        let want = ssim_oracle_16(x.frame(0), inv.frame(0));
        assert!((got - want).abs() < 1e-12, "{got} vs oracle {want}");
        assert!(got < -0.5, "binary inversion should be strongly negative, got {got}");

        // Constant vs constant+shift: below 1, exact value from the oracle.
        let flat = video_from(1, 16, 16, 1, |_, _| 100);
        let shifted = video_from(1, 16, 16, 1, |_, _| 130);
        let got = ssim(&flat, &shifted).unwrap();
        let want = ssim_oracle_16(flat.frame(0), shifted.frame(0));
        assert!((got - want).abs() < 1e-12);
        assert!(got < 1.0 && got > 0.0);

        let tiny = video_from(1, 8, 8, 1, |_, _| 0);
        assert!(ssim(&tiny, &tiny).is_err(), "frames smaller than the window must error");
    }

    #[test]
    fn ssim_converts_color_to_luma_first() {
        // A pure-red and a pure-blue frame have different luma planes, so
        // similarity must stay below 1; identical frames stay exactly 1.
        let red = video_from(1, 16, 16, 3, |_, i| if i % 3 == 0 { 200 } else { 0 });
        let blue = video_from(1, 16, 16, 3, |_, i| if i % 3 == 2 { 200 } else { 0 });
        assert_eq!(ssim(&red, &red).unwrap(), 1.0);
        assert!(ssim(&red, &blue).unwrap() < 1.0);
        let l = luma(red.frame(0), 16, 16, 3);
        assert!((l[0] - 0.299 * 200.0).abs() < 1e-12);
    }

    #[test]
    fn pixel_diversity_zero_iff_identical_and_order_invariant() {
        let a = video_from(2, 16, 16, 1, |t, i| ((t + i) % 256) as u8);
        let b = video_from(2, 16, 16, 1, |t, i| ((t + i + 3) % 256) as u8);
        let c = video_from(2, 16, 16, 1, |t, i| ((t * i) % 256) as u8);

        assert_eq!(pixel_diversity(&[&a, &a, &a]).unwrap(), 0.0);
        let d1 = pixel_diversity(&[&a, &b, &c]).unwrap();
        assert!(d1 > 0.0);
        let d2 = pixel_diversity(&[&c, &a, &b]).unwrap();
        assert!((d1 - d2).abs() < 1e-15, "permutation changed the score");

        assert!(pixel_diversity(&[&a]).is_err(), "fewer than 2 videos");
        // One differing video among copies must still be nonzero.
        assert!(pixel_diversity(&[&a, &a, &b]).unwrap() > 0.0);
    }

    #[test]
    fn feature_diversity_uses_the_tokenizer_latents() {
        let mut cfg = ModelConfig::desk(DatasetKind::SingleMnist);
        cfg.image_side = 16;
        cfg.downsample = 4;
        cfg.codebook_size = 8;
        cfg.codebook_dim = 8;
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vq = mage_model::vq::VqVae::init(&mut store, &mut rng, &cfg);

        let a = video_from(2, 16, 16, 1, |t, i| ((t * 50 + i) % 256) as u8);
        let b = video_from(2, 16, 16, 1, |t, i| ((t * 50 + i * 3) % 256) as u8);
        assert_eq!(feature_diversity(&[&a, &a], &store, &vq).unwrap(), 0.0);
        assert!(feature_diversity(&[&a, &b], &store, &vq).unwrap() > 0.0);
    }
}

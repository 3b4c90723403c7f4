//! Motion anchor: fuses first-frame token embeddings with the caption via
//! cross-attention, then conditions the result on an explicit speed
//! embedding and (in stochastic mode) a latent drawn from a variational
//! bottleneck over the whole reference clip.
//!
//! Conditioning is injected by adaptive instance normalization: each channel
//! is normalized over the spatial grid, scaled and shifted by affine maps of
//! the latent, and the speed embedding is added identically at every
//! position.

use crate::layers::{attend, key_padding_mask, Conv3, Ffn, LayerNorm, Linear, Mha};
use crate::ModelError;
use mage_autograd::params::{BoundParams, ParamStore};
use mage_autograd::scalar::Scalar;
use mage_autograd::tape::{Tape, Var};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LOGVAR_CLAMP: f64 = 20.0;
pub const ADAIN_EPS: f64 = 1e-5;

/// VIB trunk width.
const VIB_CH: usize = 64;

/// Spatially aligned anchor values plus a flag preventing the speed/latent
/// conditioning from being applied twice.
pub struct MotionAnchor {
    pub values: Var,
    pub conditioned: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentSource {
    Posterior,
    Prior,
}

/// A draw of the implicit-randomness latent, kept on the tape so the
/// reparameterized path stays differentiable.
pub struct LatentSample {
    pub value: Var,
    pub source: LatentSource,
}

pub struct AnchorNet {
    ln1: LayerNorm,
    attn: Mha,
    ln2: LayerNorm,
    ffn: Ffn,
    speed: Linear,
    vib_convs: Vec<Conv3>,
    vib_mean: Linear,
    vib_logvar: Linear,
    gamma: Linear,
    shift: Linear,
    pub heads: usize,
    pub d: usize,
    pub d_r: usize,
}

impl AnchorNet {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        d: usize,
        heads: usize,
        d_r: usize,
    ) -> AnchorNet {
        let ln1 = LayerNorm::init(store, "anchor.ln1", d);
        let attn = Mha::init(store, rng, "anchor.attn", d);
        let ln2 = LayerNorm::init(store, "anchor.ln2", d);
        let ffn = Ffn::init(store, rng, "anchor.ffn", d);
        let speed = Linear::init(store, rng, "anchor.speed", 1, d, true);
        let mut vib_convs = Vec::new();
        for i in 0..3 {
            let c_in = if i == 0 { d } else { VIB_CH };
            vib_convs.push(Conv3::init(
                store,
                rng,
                &format!("anchor.vib.c{i}"),
                c_in,
                VIB_CH,
                3,
                (1, 2, 2),
                (1, 1, 1),
            ));
        }
        let vib_mean = Linear::init(store, rng, "anchor.vib.mean", VIB_CH, d_r, true);
        let vib_logvar = Linear::init(store, rng, "anchor.vib.logvar", VIB_CH, d_r, true);
        // Identity-style start: scale 1, shift 0, so injection begins as
        // plain normalization plus the speed term.
        let gamma = Linear::init_zero_with_bias(store, "anchor.gamma", d_r, d, 1.0);
        let shift = Linear::init_zero_with_bias(store, "anchor.shift", d_r, d, 0.0);
        AnchorNet { ln1, attn, ln2, ffn, speed, vib_convs, vib_mean, vib_logvar, gamma, shift, heads, d, d_r }
    }

    /// Cross-attention from first-frame token embeddings (`[B, h·w, d]`,
    /// queries) to caption embeddings (`[B, L, d]`, keys/values masked by
    /// `valid`), fused through a feed-forward with normalization. Returns
    /// the unconditioned anchor and the raw per-head attention weights
    /// `[B, heads, h·w, L]`.
    pub fn cross_attend<F: Scalar>(
        &self,
        tape: &Tape<F>,
        bp: &BoundParams,
        e_z1: Var,
        e_s: Var,
        valid: &[usize],
    ) -> Result<(MotionAnchor, Var), ModelError> {
        let (vz, vs) = (tape.shape(e_z1), tape.shape(e_s));
        if vz.len() != 3 || vs.len() != 3 || vz[2] != self.d || vs[2] != self.d || vz[0] != vs[0] {
            return Err(ModelError::Shape(format!(
                "cross-attention expects [B, hw, {d}] and [B, L, {d}], got {vz:?} and {vs:?}",
                d = self.d
            )));
        }
        if valid.len() != vz[0] {
            return Err(ModelError::Shape("valid-length count != batch".into()));
        }
        if valid.iter().any(|&v| v == 0 || v > vs[1]) {
            return Err(ModelError::Shape(
                "caption required: every row needs at least one valid text token".into(),
            ));
        }
        let mask = key_padding_mask::<F>(valid, vs[1]);
        let (attended, weights) = attend(tape, bp, &self.attn, self.heads, e_z1, e_s, Some(&mask));
        let x = self.ln1.apply(tape, bp, tape.add(e_z1, attended));
        let m = self.ln2.apply(tape, bp, tape.add(x, self.ffn.apply(tape, bp, x)));
        Ok((MotionAnchor { values: m, conditioned: false }, weights))
    }

    /// Speed embedding c = φ(η): a single linear map of the scalar speed,
    /// batched as `[B, 1] → [B, d]`.
    pub fn speed_condition<F: Scalar>(&self, tape: &Tape<F>, bp: &BoundParams, eta: Var) -> Var {
        let sh = tape.shape(eta);
        assert_eq!(sh.len(), 2, "eta batch must be [B, 1], got {sh:?}");
        assert_eq!(sh[1], 1, "eta batch must be [B, 1], got {sh:?}");
        self.speed.apply(tape, bp, eta)
    }

    /// Posterior parameters over the latent from the full clip's token
    /// embeddings `[B, T, h·w, d]` (h·w must be a square grid).
    pub fn vib_encode<F: Scalar>(
        &self,
        tape: &Tape<F>,
        bp: &BoundParams,
        frame_embeds: Var,
    ) -> Result<(Var, Var), ModelError> {
        let sh = tape.shape(frame_embeds);
        if sh.len() != 4 || sh[3] != self.d {
            return Err(ModelError::Shape(format!(
                "vib expects [B, T, hw, {}], got {sh:?}",
                self.d
            )));
        }
        let (b, t, hw) = (sh[0], sh[1], sh[2]);
        if t < 2 {
            return Err(ModelError::Shape(format!(
                "the bottleneck summarizes a clip; got T={t} < 2 frames"
            )));
        }
        let side = (hw as f64).sqrt() as usize;
        if side * side != hw {
            return Err(ModelError::Shape(format!("token grid of {hw} cells is not square")));
        }
        let x = tape.reshape(frame_embeds, &[b, t, side, side, self.d]);
        let mut x = tape.permute(x, &[0, 4, 1, 2, 3]);
        for conv in &self.vib_convs {
            x = tape.gelu(conv.apply(tape, bp, x));
        }
        // Global average pool over (T, h, w).
        let pooled = tape.mean_axes(x, &[2, 3, 4], false);
        let mean = self.vib_mean.apply(tape, bp, pooled);
        let logvar = self.vib_logvar.apply(tape, bp, pooled);
        let logvar = tape.clamp(logvar, F::cast(-LOGVAR_CLAMP), F::cast(LOGVAR_CLAMP));
        Ok((mean, logvar))
    }

    /// Reparameterized posterior draw r = mean + exp(logvar/2)·ε.
    pub fn sample_posterior<F: Scalar>(
        &self,
        tape: &Tape<F>,
        mean: Var,
        logvar: Var,
        rng: &mut ChaCha8Rng,
    ) -> LatentSample {
        let sh = tape.shape(mean);
        let eps = standard_normal_array::<F>(&sh, rng);
        let std = tape.exp(tape.mul_scalar(logvar, F::cast(0.5)));
        let value = tape.add(mean, tape.mul(std, tape.constant(eps)));
        LatentSample { value, source: LatentSource::Posterior }
    }

    /// Prior draw r ~ N(0, I) of shape `[B, d_r]`.
    pub fn sample_prior<F: Scalar>(&self, tape: &Tape<F>, b: usize, rng: &mut ChaCha8Rng) -> LatentSample {
        let eps = standard_normal_array::<F>(&[b, self.d_r], rng);
        LatentSample { value: tape.constant(eps), source: LatentSource::Prior }
    }

    /// Condition the anchor: adaptive instance normalization with latent-
    /// driven scale/shift (skipped entirely in deterministic mode) plus the
    /// speed embedding added identically at every spatial position.
    pub fn inject<F: Scalar>(
        &self,
        tape: &Tape<F>,
        bp: &BoundParams,
        anchor: MotionAnchor,
        r: Option<&LatentSample>,
        c: Var,
    ) -> Result<MotionAnchor, ModelError> {
        if anchor.conditioned {
            return Err(ModelError::Config(
                "anchor is already conditioned; speed/latent injection must happen exactly once"
                    .into(),
            ));
        }
        let sh = tape.shape(anchor.values);
        let b = sh[0];
        let normalized = spatial_normalize(tape, anchor.values);
        let styled = match r {
            Some(latent) => {
                let g = self.gamma.apply(tape, bp, latent.value);
                let s = self.shift.apply(tape, bp, latent.value);
                let g = tape.reshape(g, &[b, 1, self.d]);
                let s = tape.reshape(s, &[b, 1, self.d]);
                tape.add(tape.mul(normalized, g), s)
            }
            None => normalized,
        };
        let c_row = tape.reshape(c, &[b, 1, self.d]);
        Ok(MotionAnchor { values: tape.add(styled, c_row), conditioned: true })
    }
}

/// Per-channel normalization over the spatial axis of `[B, hw, d]`.
fn spatial_normalize<F: Scalar>(tape: &Tape<F>, x: Var) -> Var {
    let mu = tape.mean_axes(x, &[1], true);
    let centered = tape.sub(x, mu);
    let var = tape.mean_axes(tape.square(centered), &[1], true);
    let denom = tape.sqrt(tape.add_scalar(var, F::cast(ADAIN_EPS)));
    tape.div(centered, denom)
}

fn standard_normal_array<F: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<F> {
    // Box-Muller on f64 draws keeps the stream identical across dtypes.
    let n = shape.iter().product();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let mag = (-2.0 * u1.ln()).sqrt();
        out.push(F::cast(mag * (2.0 * std::f64::consts::PI * u2).cos()));
        if out.len() < n {
            out.push(F::cast(mag * (2.0 * std::f64::consts::PI * u2).sin()));
        }
    }
    ArrayD::from_shape_vec(IxDyn(shape), out).expect("shape product")
}

/// Closed-form KL(N(mean, diag exp(logvar)) ‖ N(0, I)) per batch row,
/// averaged over the batch: 0.5·Σ(exp(logvar) + mean² − 1 − logvar).
pub fn kl_to_standard_normal<F: Scalar>(tape: &Tape<F>, mean: Var, logvar: Var) -> Var {
    let ev = tape.exp(logvar);
    let m2 = tape.square(mean);
    let inner = tape.sub(tape.sub(tape.add(ev, m2), tape.scalar(F::one())), logvar);
    let per_row = tape.sum_axes(inner, &[1], false);
    tape.mul_scalar(tape.mean(per_row), F::cast(0.5))
}

/// Tape-free closed form for property sweeps.
pub fn kl_scalar(mean: &[f64], logvar: &[f64]) -> f64 {
    assert_eq!(mean.len(), logvar.len());
    0.5 * mean
        .iter()
        .zip(logvar)
        .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
}

/// Speed must be strictly inside (0, 1).
pub fn validate_eta(eta: f64) -> Result<(), ModelError> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(ModelError::Config(format!("speed eta must lie in (0,1), got {eta}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use mage_autograd::check::grad_check;
    use mage_autograd::init::{self, seeded_rng};
    use rand::SeedableRng;

    fn tiny_net<F: Scalar>(seed: u64) -> (ParamStore<F>, AnchorNet) {
        let mut store = ParamStore::<F>::new();
        let mut rng = seeded_rng(seed);
        let net = AnchorNet::init(&mut store, &mut rng, 8, 2, 4);
        (store, net)
    }

    #[test]
    fn cross_attention_rows_sum_to_one_and_single_token_gets_all_weight() {
        let (store, net) = tiny_net::<f64>(1);
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let mut rng = seeded_rng(2);
        let e_z1 = tape.leaf(init::normal(&mut rng, &[2, 4, 8], 0.0, 1.0));
        let e_s = tape.leaf(init::normal(&mut rng, &[2, 5, 8], 0.0, 1.0));
        let (anchor, w) = net.cross_attend(&tape, &bp, e_z1, e_s, &[1, 3]).unwrap();
        assert!(!anchor.conditioned);
        assert_eq!(tape.shape(anchor.values), vec![2, 4, 8]);
        let wv = tape.value(w);
        for b in 0..2 {
            for h in 0..2 {
                for q in 0..4 {
                    let row: f64 = (0..5).map(|k| wv[[b, h, q, k]]).sum();
                    assert!((row - 1.0).abs() < 1e-6);
                }
            }
        }
        // Batch row 0 has a single valid token: all weight lands on it.
        for h in 0..2 {
            for q in 0..4 {
                assert_eq!(wv[[0, h, q, 0]], 1.0);
            }
        }
        // Empty captions are refused.
        assert!(net.cross_attend(&tape, &bp, e_z1, e_s, &[0, 3]).is_err());
    }

    #[test]
    fn speed_embedding_is_affine_in_eta() {
        let (store, net) = tiny_net::<f64>(3);
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let etas = tape.constant(ndarray::arr2(&[[0.2], [0.4], [0.6]]).into_dyn());
        let c = net.speed_condition(&tape, &bp, etas);
        let cv = tape.value(c);
        for ch in 0..8 {
            let d1 = cv[[1, ch]] - cv[[0, ch]];
            let d2 = cv[[2, ch]] - cv[[1, ch]];
            assert!((d1 - d2).abs() < 1e-12, "equal eta steps give equal embedding steps");
        }
        assert!(validate_eta(0.5).is_ok());
        assert!(validate_eta(0.0).is_err());
        assert!(validate_eta(1.0).is_err());
        assert!(validate_eta(-0.1).is_err());
    }

    #[test]
    fn vib_outputs_have_latent_width_and_reject_single_frames() {
        let (store, net) = tiny_net::<f32>(4);
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let mut rng = seeded_rng(5);
        let a = init::normal(&mut rng, &[2, 3, 16, 8], 0.0, 1.0);
        let va = tape.constant(a.clone());
        let (mean, logvar) = net.vib_encode(&tape, &bp, va).unwrap();
        assert_eq!(tape.shape(mean), vec![2, 4]);
        assert_eq!(tape.shape(logvar), vec![2, 4]);
        let lv = tape.value(logvar);
        assert!(lv.iter().all(|v| v.abs() <= LOGVAR_CLAMP as f32));

        // Same clip twice → identical parameters.
        let vb = tape.constant(a.clone());
        let (mean2, _) = net.vib_encode(&tape, &bp, vb).unwrap();
        assert_eq!(tape.value(mean), tape.value(mean2));

        // A different clip → different mean.
        let c = init::normal(&mut rng, &[2, 3, 16, 8], 0.0, 1.0);
        let (mean3, _) = net.vib_encode(&tape, &bp, tape.constant(c)).unwrap();
        assert_ne!(tape.value(mean2), tape.value(mean3));

        let single = tape.constant(init::normal(&mut rng, &[2, 1, 16, 8], 0.0, 1.0));
        assert!(net.vib_encode(&tape, &bp, single).is_err());
    }

    #[test]
    fn reparameterization_passes_identity_gradient_to_the_mean() {
        let (store, net) = tiny_net::<f64>(6);
        let tape = Tape::new();
        let _bp = store.bind(&tape);
        let mean = tape.leaf(ndarray::arr2(&[[0.3, -0.7, 0.1, 2.0]]).into_dyn());
        let logvar = tape.leaf(ndarray::arr2(&[[0.0, -1.0, 2.0, 0.5]]).into_dyn());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = net.sample_posterior(&tape, mean, logvar, &mut rng);
        assert_eq!(r.source, LatentSource::Posterior);
        let mut grads = tape.backward(tape.sum(r.value));
        let gm = grads.take(mean).unwrap();
        assert!(gm.iter().all(|&g| g == 1.0), "∂r/∂mean must be the identity");

        // Same seed reproduces the draw; the zero-variance limit collapses to the mean.
        let tape2 = Tape::<f64>::new();
        let m2 = tape2.leaf(ndarray::arr2(&[[0.3, -0.7, 0.1, 2.0]]).into_dyn());
        let lv_tiny = tape2.leaf(ndarray::arr2(&[[-60.0, -60.0, -60.0, -60.0]]).into_dyn());
        let lv_tiny = tape2.clamp(lv_tiny, -LOGVAR_CLAMP, LOGVAR_CLAMP);
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        let r2 = net.sample_posterior(&tape2, m2, lv_tiny, &mut rng2);
        let rv = tape2.value(r2.value);
        for (got, want) in rv.iter().zip([0.3, -0.7, 0.1, 2.0]) {
            assert!((got - want).abs() < 1e-3, "clamped-variance draw ≈ mean");
        }
    }

    #[test]
    fn prior_draws_center_on_zero() {
        let (store, net) = tiny_net::<f64>(7);
        let tape = Tape::new();
        let _bp = store.bind(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = net.sample_prior(&tape, 2500, &mut rng);
        assert_eq!(r.source, LatentSource::Prior);
        let v = tape.value(r.value);
        for ch in 0..4 {
            let mean: f64 = (0..2500).map(|b| v[[b, ch]]).sum::<f64>() / 2500.0;
            assert!(mean.abs() < 4.0 / (2500f64).sqrt(), "dim {ch} mean {mean}");
        }
    }

    #[test]
    fn kl_closed_form_matches_hand_values_and_stays_nonnegative() {
        assert_eq!(kl_scalar(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((kl_scalar(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let mean: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let logvar: Vec<f64> = (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect();
            assert!(kl_scalar(&mean, &logvar) >= 0.0);
        }
        // Tape version agrees with the scalar form (batch mean of two rows).
        let tape = Tape::<f64>::new();
        let mean = tape.leaf(ndarray::arr2(&[[1.0, 0.0], [0.5, -0.5]]).into_dyn());
        let logvar = tape.leaf(ndarray::arr2(&[[0.0, 1.0], [-1.0, 0.25]]).into_dyn());
        let kl = kl_to_standard_normal(&tape, mean, logvar);
        let want = 0.5 * (kl_scalar(&[1.0, 0.0], &[0.0, 1.0]) + kl_scalar(&[0.5, -0.5], &[-1.0, 0.25]));
        assert!((tape.scalar_value(kl) - want).abs() < 1e-12);
    }

    #[test]
    fn injection_normalizes_scales_and_adds_speed_channelwise() {
        let (mut store, net) = tiny_net::<f64>(8);
        // Give the style maps real weights so the variance property is
        // non-trivial.
        let mut rng = seeded_rng(21);
        store.set(net.gamma.w, init::normal(&mut rng, &[4, 8], 0.0, 0.3));
        store.set(net.shift.w, init::normal(&mut rng, &[4, 8], 0.0, 0.3));

        let tape = Tape::new();
        let bp = store.bind(&tape);
        let m_raw = tape.leaf(init::normal(&mut rng, &[1, 64, 8], 0.0, 2.0));
        let anchor = MotionAnchor { values: m_raw, conditioned: false };
        let r = LatentSample {
            value: tape.constant(init::normal(&mut rng, &[1, 4], 0.0, 1.0)),
            source: LatentSource::Prior,
        };
        let c = tape.constant(init::normal(&mut rng, &[1, 8], 0.0, 1.0));
        let out = net.inject(&tape, &bp, anchor, Some(&r), c).unwrap();
        assert!(out.conditioned);

        // Spatial variance per channel of the pre-shift styled tensor equals
        // gamma² up to the ε regularizer.
        let g = tape.value(net.gamma.apply(&tape, &bp, r.value));
        let styled = tape.value(out.values);
        let cv = tape.value(c);
        let sv = tape.value(net.shift.apply(&tape, &bp, r.value));
        for ch in 0..8 {
            let col: Vec<f64> = (0..64).map(|p| styled[[0, p, ch]] - cv[[0, ch]] - sv[[0, ch]]).collect();
            let mean = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
            let want = g[[0, ch]] * g[[0, ch]];
            assert!(
                (var - want).abs() <= 1e-4 * want.max(1.0),
                "channel {ch}: var {var} vs gamma² {want}"
            );
        }

        // Double conditioning is refused.
        let c2 = tape.constant(init::normal(&mut rng, &[1, 8], 0.0, 1.0));
        assert!(net.inject(&tape, &bp, out, None, c2).is_err());
    }

    #[test]
    fn position_differences_are_independent_of_speed() {
        let (store, net) = tiny_net::<f64>(9);
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let mut rng = seeded_rng(22);
        let base = init::normal(&mut rng, &[1, 16, 8], 0.0, 1.0);
        let c1 = tape.constant(init::normal(&mut rng, &[1, 8], 0.0, 1.0));
        let c2 = tape.constant(init::normal(&mut rng, &[1, 8], 0.0, 1.0));
        let a1 = MotionAnchor { values: tape.leaf(base.clone()), conditioned: false };
        let a2 = MotionAnchor { values: tape.leaf(base), conditioned: false };
        let o1 = tape.value(net.inject(&tape, &bp, a1, None, c1).unwrap().values);
        let o2 = tape.value(net.inject(&tape, &bp, a2, None, c2).unwrap().values);
        for ch in 0..8 {
            for (p, q) in [(0usize, 5usize), (3, 11), (7, 15)] {
                let d1 = o1[[0, p, ch]] - o1[[0, q, ch]];
                let d2 = o2[[0, p, ch]] - o2[[0, q, ch]];
                assert!((d1 - d2).abs() < 1e-12);
            }
        }
        // Deterministic injection is normalize + speed exactly.
        let tape2 = Tape::<f64>::new();
        let bp2 = store.bind(&tape2);
        let mut rng2 = seeded_rng(23);
        let m = tape2.leaf(init::normal(&mut rng2, &[1, 16, 8], 0.0, 1.5));
        let c = tape2.constant(init::normal(&mut rng2, &[1, 8], 0.0, 1.0));
        let out = net
            .inject(&tape2, &bp2, MotionAnchor { values: m, conditioned: false }, None, c)
            .unwrap();
        let want = tape2.add(spatial_normalize(&tape2, m), tape2.reshape(c, &[1, 1, 8]));
        assert_eq!(tape2.value(out.values), tape2.value(want));
    }

    #[test]
    fn anchor_pipeline_survives_finite_difference_check() {
        let (store, net) = tiny_net::<f64>(10);
        let mut rng = seeded_rng(31);
        let e_z1 = init::normal(&mut rng, &[1, 4, 8], 0.0, 1.0);
        let e_s = init::normal(&mut rng, &[1, 3, 8], 0.0, 1.0);
        let eta = ndarray::arr2(&[[0.37]]).into_dyn();
        let r = init::normal(&mut rng, &[1, 4], 0.0, 1.0);
        let report = grad_check(
            |tape, vars| {
                let bp = store.bind(tape);
                let (anchor, _) = net.cross_attend(tape, &bp, vars[0], vars[1], &[3]).unwrap();
                let c = net.speed_condition(tape, &bp, vars[2]);
                let latent = LatentSample { value: vars[3], source: LatentSource::Posterior };
                let out = net.inject(tape, &bp, anchor, Some(&latent), c).unwrap();
                // Weighted sum keeps per-element gradients non-uniform.
                let w = tape.constant(init::normal(&mut seeded_rng(32), &[1, 4, 8], 0.0, 1.0));
                tape.sum(tape.mul(out.values, w))
            },
            &[e_z1, e_s, eta, r],
            1e-5,
            24,
            33,
        );
        report.assert_below(1e-4);
    }
}

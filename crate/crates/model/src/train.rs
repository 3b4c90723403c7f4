//! End-to-end generator training: caption encoder, motion anchor, and axial
//! transformer optimized jointly against token cross-entropy plus the speed
//! and bottleneck regularizers. Frames arrive pre-tokenized by a frozen
//! image tokenizer; every step draws one speed scalar for the whole batch and
//! subsamples each clip at the matching interval.

use crate::anchor::{kl_to_standard_normal, validate_eta, AnchorNet, LatentSample, LatentSource};
use crate::config::ModelConfig;
use crate::generator::{generation_loss, GenLoss, Generator};
use crate::text::{TextEncoder, TokenizedText};
use crate::ModelError;
use mage_autograd::optim::{warmup_cosine, Adam};
use mage_autograd::params::{BoundParams, ParamStore};
use mage_autograd::scalar::Scalar;
use mage_autograd::tape::{Tape, Var};
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The three jointly trained stages. The image tokenizer is deliberately
/// absent: it is trained separately and frozen before this model ever runs.
pub struct Mage {
    pub text: TextEncoder,
    pub anchor: AnchorNet,
    pub gen: Generator,
}

impl Mage {
    /// Registration order is fixed so a checkpoint written from one instance
    /// reloads into another by parameter name.
    pub fn init<F: Scalar>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Mage {
        assert!(cfg.vocab_size >= 2, "vocabulary must be resolved before model init");
        let text = TextEncoder::init(
            store,
            rng,
            cfg.vocab_size,
            cfg.d_model,
            cfg.l_max,
            cfg.heads,
            cfg.blocks,
        );
        let anchor = AnchorNet::init(store, rng, cfg.d_model, cfg.heads, cfg.d_r);
        let gen = Generator::init(
            store,
            rng,
            cfg.codebook_size,
            cfg.d_model,
            cfg.heads,
            cfg.token_side(),
            cfg.max_sequence(),
            cfg.blocks,
        );
        Mage { text, anchor, gen }
    }
}

/// One training clip: every raw frame pre-tokenized (`[raw_frames, h·w]`
/// flat) plus its caption.
pub struct MageSample {
    pub frame_tokens: Vec<u16>,
    pub raw_frames: usize,
    pub caption: TokenizedText,
}

pub struct MageTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Fraction of steps spent linearly warming the learning rate.
    pub lr_warmup_frac: f64,
    /// Fraction of steps over which the bottleneck KL weight ramps 0 → β.
    pub kl_warmup_frac: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for MageTrainConfig {
    fn default() -> Self {
        MageTrainConfig {
            steps: 400,
            batch: 8,
            lr: 5e-5,
            lr_warmup_frac: 0.05,
            kl_warmup_frac: 0.1,
            clip_norm: 1.0,
            seed: 7,
            log_every: 25,
        }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct MageTrainLogRow {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub cross_entropy: f64,
    pub condition: f64,
    pub kl: Option<f64>,
    pub accuracy: f64,
    pub eta: f64,
}

/// How the bottleneck latent enters a forward pass.
enum LatentMode<'a> {
    /// Deterministic model: no latent at all.
    Off,
    /// Reparameterized posterior draw (training).
    PosteriorDraw(&'a mut ChaCha8Rng),
    /// Posterior mean without noise (held-out scoring).
    PosteriorMean,
}

struct ForwardOut {
    loss: GenLoss,
    logits: Var,
    targets: Vec<usize>,
}

fn forward_batch<F: Scalar>(
    tape: &Tape<F>,
    bp: &BoundParams,
    mage: &Mage,
    cfg: &ModelConfig,
    tokens: &[usize],
    captions: &[TokenizedText],
    eta: f64,
    latent: LatentMode<'_>,
    beta_kl_eff: f64,
) -> Result<ForwardOut, ModelError> {
    validate_eta(eta)?;
    let b = captions.len();
    let t = cfg.t_frames;
    let hw = cfg.tokens_per_frame();
    if tokens.len() != b * t * hw {
        return Err(ModelError::Shape(format!(
            "expected {b}·{t}·{hw} tokens, got {}",
            tokens.len()
        )));
    }

    // First-frame embeddings (queries for the caption cross-attention) come
    // from the generator's own token table.
    let mut z1 = Vec::with_capacity(b * hw);
    for bi in 0..b {
        z1.extend_from_slice(&tokens[bi * t * hw..bi * t * hw + hw]);
    }
    let e_z1 = tape.embedding(bp.var(mage.gen.token_embed), &z1);
    let e_z1 = tape.reshape(e_z1, &[b, hw, cfg.d_model]);

    let (e_s, valid) = mage.text.encode(tape, bp, captions)?;
    let (anchor, _weights) = mage.anchor.cross_attend(tape, bp, e_z1, e_s, &valid)?;

    let eta_arr = ArrayD::from_elem(IxDyn(&[b, 1]), F::cast(eta));
    let c = mage.anchor.speed_condition(tape, bp, tape.constant(eta_arr));

    let (r, kl) = match latent {
        LatentMode::Off => (None, None),
        _ => {
            let clip = tape.embedding(bp.var(mage.gen.token_embed), tokens);
            let clip = tape.reshape(clip, &[b, t, hw, cfg.d_model]);
            let (mean, logvar) = mage.anchor.vib_encode(tape, bp, clip)?;
            let kl = kl_to_standard_normal(tape, mean, logvar);
            let sample = match latent {
                LatentMode::PosteriorDraw(rng) => mage.anchor.sample_posterior(tape, mean, logvar, rng),
                _ => LatentSample { value: mean, source: LatentSource::Posterior },
            };
            (Some(sample), Some(kl))
        }
    };
    let m_tilde = mage.anchor.inject(tape, bp, anchor, r.as_ref(), c)?;

    let logits = mage.gen.forward_teacher_forced(tape, bp, &m_tilde, tokens, b, t)?;
    let mut targets = Vec::with_capacity(b * (t - 1) * hw);
    for bi in 0..b {
        targets.extend_from_slice(&tokens[bi * t * hw + hw..(bi + 1) * t * hw]);
    }
    let loss = generation_loss(tape, logits, &targets, c, kl, cfg.alpha, beta_kl_eff)?;
    Ok(ForwardOut { loss, logits, targets })
}

fn argmax_accuracy<F: Scalar>(logits: &ArrayD<F>, targets: &[usize]) -> f64 {
    let k = *logits.shape().last().unwrap();
    let flat = logits.to_shape((targets.len(), k)).expect("logit rows");
    let mut hit = 0usize;
    for (row, &want) in flat.outer_iter().zip(targets) {
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        if best == want {
            hit += 1;
        }
    }
    hit as f64 / targets.len() as f64
}

fn gather_clip(cfg: &ModelConfig, sample: &MageSample, eta: f64, out: &mut Vec<usize>) {
    let hw = cfg.tokens_per_frame();
    for raw_idx in cfg.subsample_indices(eta, sample.raw_frames) {
        out.extend(
            sample.frame_tokens[raw_idx * hw..(raw_idx + 1) * hw]
                .iter()
                .map(|&t| t as usize),
        );
    }
}

fn validate_samples(cfg: &ModelConfig, samples: &[MageSample]) -> Result<(), ModelError> {
    if samples.is_empty() {
        return Err(ModelError::Config("no training samples".into()));
    }
    let hw = cfg.tokens_per_frame();
    let (_, a_max) = cfg.interval_range;
    let deepest = (1.0 + (cfg.t_frames as f64 - 1.0) * a_max).round() as usize;
    for (i, s) in samples.iter().enumerate() {
        if s.frame_tokens.len() != s.raw_frames * hw {
            return Err(ModelError::Shape(format!(
                "sample {i}: {} tokens for {} raw frames of {hw}",
                s.frame_tokens.len(),
                s.raw_frames
            )));
        }
        if s.raw_frames < deepest {
            return Err(ModelError::Config(format!(
                "sample {i}: {} raw frames cannot cover the slowest subsampling (needs {deepest})",
                s.raw_frames
            )));
        }
        if let Some(&bad) = s.frame_tokens.iter().find(|&&t| (t as usize) >= cfg.codebook_size) {
            return Err(ModelError::Shape(format!(
                "sample {i}: token {bad} outside codebook of {}",
                cfg.codebook_size
            )));
        }
    }
    Ok(())
}

/// Train the full generator stack. Deterministic given the config and the
/// sample list; the returned store holds the final parameters.
pub fn train_mage(
    cfg: &ModelConfig,
    tcfg: &MageTrainConfig,
    samples: &[MageSample],
) -> Result<(ParamStore<f32>, Mage, Vec<MageTrainLogRow>), ModelError> {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mage = Mage::init(&mut store, &mut rng, cfg);
    let log = train_mage_steps(cfg, tcfg, samples, &mut store, &mage, 0, &mut rng)?;
    Ok((store, mage, log))
}

/// Run `tcfg.steps` optimization steps on an existing model, e.g. to continue
/// from a checkpoint. Logged step numbers carry on from `start_step`; the
/// warmup/decay schedules cover this run's own horizon and optimizer moments
/// start fresh.
pub fn train_mage_steps(
    cfg: &ModelConfig,
    tcfg: &MageTrainConfig,
    samples: &[MageSample],
    store: &mut ParamStore<f32>,
    mage: &Mage,
    start_step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<MageTrainLogRow>, ModelError> {
    validate_samples(cfg, samples)?;
    if tcfg.steps == 0 || tcfg.batch == 0 {
        return Err(ModelError::Config("steps and batch must be positive".into()));
    }

    let mut adam = Adam::new();
    let lr_warm = ((tcfg.steps as f64 * tcfg.lr_warmup_frac).ceil() as u64).max(1);
    let kl_warm = ((tcfg.steps as f64 * tcfg.kl_warmup_frac).ceil() as usize).max(1);
    let hw = cfg.tokens_per_frame();
    let mut log = Vec::new();

    for step in 0..tcfg.steps {
        // One speed scalar per step, strictly inside (0, 1), shared by the
        // whole batch so every clip in it is subsampled identically.
        let eta = loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                break u;
            }
        };
        let mut tokens = Vec::with_capacity(tcfg.batch * cfg.t_frames * hw);
        let mut captions = Vec::with_capacity(tcfg.batch);
        for _ in 0..tcfg.batch {
            let pick = &samples[rng.gen_range(0..samples.len())];
            gather_clip(cfg, pick, eta, &mut tokens);
            captions.push(pick.caption.clone());
        }

        let beta_kl_eff = cfg.beta_kl * (((step + 1) as f64 / kl_warm as f64).min(1.0));
        let latent = if cfg.deterministic {
            LatentMode::Off
        } else {
            LatentMode::PosteriorDraw(&mut *rng)
        };

        let tape = Tape::new();
        let bp = store.bind(&tape);
        let out = forward_batch(&tape, &bp, mage, cfg, &tokens, &captions, eta, latent, beta_kl_eff)?;
        let mut grads = tape.backward(out.loss.total);
        let mut param_grads = bp.collect_grads(&mut grads);
        let lr = warmup_cosine(step as u64, tcfg.steps as u64, tcfg.lr, lr_warm, 0.1);
        adam.step(store, &mut param_grads, lr, Some(tcfg.clip_norm));

        if step % tcfg.log_every == 0 || step + 1 == tcfg.steps {
            let row = MageTrainLogRow {
                step: start_step + step,
                lr,
                total: tape.scalar_value(out.loss.total) as f64,
                cross_entropy: tape.scalar_value(out.loss.cross_entropy) as f64,
                condition: tape.scalar_value(out.loss.condition) as f64,
                kl: out.loss.kl.map(|k| tape.scalar_value(k) as f64),
                accuracy: argmax_accuracy(&tape.value(out.logits), &out.targets),
                eta,
            };
            log::info!(
                "mage step {:>5}  lr {:.2e}  loss {:.4}  ce {:.4}  cond {:.2e}  kl {}  acc {:.3}",
                row.step,
                row.lr,
                row.total,
                row.cross_entropy,
                row.condition,
                row.kl.map(|k| format!("{k:.3}")).unwrap_or_else(|| "-".into()),
                row.accuracy
            );
            log.push(row);
        }
    }
    Ok(log)
}

/// Fraction of next-frame tokens whose argmax score matches the ground truth
/// under teacher forcing (stochastic models use the posterior mean, no
/// noise). Processed in small batches over all `samples`.
pub fn teacher_forced_accuracy(
    store: &ParamStore<f32>,
    mage: &Mage,
    cfg: &ModelConfig,
    samples: &[MageSample],
    eta: f64,
) -> Result<f64, ModelError> {
    validate_samples(cfg, samples)?;
    let hw = cfg.tokens_per_frame();
    let chunk = 8usize;
    let mut hits = 0.0f64;
    let mut rows = 0usize;
    for group in samples.chunks(chunk) {
        let mut tokens = Vec::with_capacity(group.len() * cfg.t_frames * hw);
        let mut captions = Vec::with_capacity(group.len());
        for s in group {
            gather_clip(cfg, s, eta, &mut tokens);
            captions.push(s.caption.clone());
        }
        let latent = if cfg.deterministic { LatentMode::Off } else { LatentMode::PosteriorMean };
        let tape = Tape::new();
        let bp = store.bind_frozen(&tape);
        let out = forward_batch(&tape, &bp, mage, cfg, &tokens, &captions, eta, latent, cfg.beta_kl)?;
        let n = out.targets.len();
        hits += argmax_accuracy(&tape.value(out.logits), &out.targets) * n as f64;
        rows += n;
    }
    Ok(hits / rows as f64)
}

/// Build the conditioned anchor for generation: encode the caption, cross-
/// attend from the first frame's token embeddings, and inject the speed
/// embedding (plus a prior latent draw when the model is stochastic).
/// Returns the anchor values `[B, h·w, d]` and the caption attention weights
/// `[B, heads, h·w, L]`.
pub fn conditioned_anchor(
    store: &ParamStore<f32>,
    mage: &Mage,
    cfg: &ModelConfig,
    captions: &[TokenizedText],
    z1: &[usize],
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(ArrayD<f32>, ArrayD<f32>), ModelError> {
    validate_eta(eta)?;
    let b = captions.len();
    let hw = cfg.tokens_per_frame();
    if z1.len() != b * hw {
        return Err(ModelError::Shape(format!(
            "expected {b}·{hw} first-frame tokens, got {}",
            z1.len()
        )));
    }
    let tape = Tape::new();
    let bp = store.bind_frozen(&tape);
    let e_z1 = tape.embedding(bp.var(mage.gen.token_embed), z1);
    let e_z1 = tape.reshape(e_z1, &[b, hw, cfg.d_model]);
    let (e_s, valid) = mage.text.encode(&tape, &bp, captions)?;
    let (anchor, weights) = mage.anchor.cross_attend(&tape, &bp, e_z1, e_s, &valid)?;
    let eta_arr = ArrayD::from_elem(IxDyn(&[b, 1]), eta as f32);
    let c = mage.anchor.speed_condition(&tape, &bp, tape.constant(eta_arr));
    let r = if cfg.deterministic { None } else { Some(mage.anchor.sample_prior(&tape, b, rng)) };
    let m_tilde = mage.anchor.inject(&tape, &bp, anchor, r.as_ref(), c)?;
    Ok((tape.value(m_tilde.values), tape.value(weights)))
}

//! Frame tokenizer: a convolutional autoencoder with a discrete codebook.
//! Images are encoded to a 16×16 grid of latent vectors, each snapped to its
//! nearest codebook row (ties to the lowest index), and decoded back to
//! pixels. Gradients pass straight through the quantizer, the codebook term
//! pulls selected rows toward the encoder outputs, and the commitment term
//! pulls the encoder toward the rows it selected.

use crate::config::ModelConfig;
use crate::layers::Conv;
use crate::ModelError;
use mage_autograd::init;
use mage_autograd::optim::Adam;
use mage_autograd::params::{BoundParams, ParamId, ParamStore};
use mage_autograd::scalar::Scalar;
use mage_autograd::tape::{Tape, Var};
use ndarray::{Array2, ArrayD, ArrayView2, IxDyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct ResBlock {
    c1: Conv,
    c2: Conv,
}

impl ResBlock {
    fn init<F: Scalar>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, name: &str, ch: usize) -> ResBlock {
        ResBlock {
            c1: Conv::init(store, rng, &format!("{name}.c1"), ch, ch, 3, 1, 1),
            c2: Conv::init(store, rng, &format!("{name}.c2"), ch, ch, 3, 1, 1),
        }
    }

    fn apply<F: Scalar>(&self, tape: &Tape<F>, bp: &BoundParams, x: Var) -> Var {
        let h = self.c1.apply(tape, bp, tape.gelu(x));
        let h = self.c2.apply(tape, bp, tape.gelu(h));
        tape.add(x, h)
    }
}

/// Trunk width of the convolutional stacks.
const CH: usize = 64;

pub struct VqVae {
    enc_in: Conv,
    enc_down: Vec<Conv>,
    enc_res: ResBlock,
    enc_out: Conv,
    dec_in: Conv,
    dec_res: ResBlock,
    dec_up: Vec<Conv>,
    dec_out: Conv,
    pub codebook: ParamId,
    pub k: usize,
    pub d: usize,
    pub n: usize,
    pub channels: usize,
    pub image_side: usize,
}

impl VqVae {
    pub fn init<F: Scalar>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> VqVae {
        let (k, d, n, c) = (cfg.codebook_size, cfg.codebook_dim, cfg.downsample, cfg.image_channels);
        let stages = n.trailing_zeros() as usize;
        assert!(n == 1 << stages && stages >= 1, "downsample must be a power of two");
        let enc_in = Conv::init(store, rng, "vq.enc.in", c, 32, 3, 1, 1);
        let mut enc_down = Vec::new();
        for s in 0..stages {
            let c_in = if s == 0 { 32 } else { CH };
            enc_down.push(Conv::init(store, rng, &format!("vq.enc.down{s}"), c_in, CH, 4, 2, 1));
        }
        let enc_res = ResBlock::init(store, rng, "vq.enc.res", CH);
        let enc_out = Conv::init(store, rng, "vq.enc.out", CH, d, 3, 1, 1);

        let dec_in = Conv::init(store, rng, "vq.dec.in", d, CH, 3, 1, 1);
        let dec_res = ResBlock::init(store, rng, "vq.dec.res", CH);
        let mut dec_up = Vec::new();
        for s in 0..stages {
            let c_out = if s + 1 == stages { 32 } else { CH };
            dec_up.push(Conv::init(store, rng, &format!("vq.dec.up{s}"), CH, c_out, 3, 1, 1));
        }
        let dec_out = Conv::init(store, rng, "vq.dec.out", 32, c, 3, 1, 1);
        let codebook = store.register("vq.codebook", init::normal(rng, &[k, d], 0.0, 1.0));
        VqVae {
            enc_in,
            enc_down,
            enc_res,
            enc_out,
            dec_in,
            dec_res,
            dec_up,
            dec_out,
            codebook,
            k,
            d,
            n,
            channels: c,
            image_side: cfg.image_side,
        }
    }

    pub fn grid_side(&self) -> usize {
        self.image_side / self.n
    }

    pub fn grid_len(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    /// `x: [B, C, H, W]` in [0,1] → pre-quantization latents `[B, h·w, D]`.
    pub fn encode<F: Scalar>(
        &self,
        tape: &Tape<F>,
        bp: &BoundParams,
        x: Var,
    ) -> Result<Var, ModelError> {
        let sh = tape.shape(x);
        if sh.len() != 4 || sh[1] != self.channels || sh[2] != self.image_side || sh[3] != self.image_side {
            return Err(ModelError::Shape(format!(
                "encoder expects [B, {}, {}, {}], got {sh:?}",
                self.channels, self.image_side, self.image_side
            )));
        }
        let b = sh[0];
        let mut h = self.enc_in.apply(tape, bp, x);
        for conv in &self.enc_down {
            h = conv.apply(tape, bp, tape.gelu(h));
        }
        h = self.enc_res.apply(tape, bp, h);
        h = self.enc_out.apply(tape, bp, h);
        let side = self.grid_side();
        let h = tape.permute(h, &[0, 2, 3, 1]);
        Ok(tape.reshape(h, &[b, side * side, self.d]))
    }

    /// Quantized latents `[B, h·w, D]` → image `[B, C, H, W]` in (0,1).
    pub fn decode<F: Scalar>(
        &self,
        tape: &Tape<F>,
        bp: &BoundParams,
        q: Var,
    ) -> Result<Var, ModelError> {
        let sh = tape.shape(q);
        let side = self.grid_side();
        if sh.len() != 3 || sh[1] != side * side || sh[2] != self.d {
            return Err(ModelError::Shape(format!(
                "decoder expects [B, {}, {}], got {sh:?}",
                side * side,
                self.d
            )));
        }
        let b = sh[0];
        let h = tape.reshape(q, &[b, side, side, self.d]);
        let h = tape.permute(h, &[0, 3, 1, 2]);
        let mut h = self.dec_in.apply(tape, bp, h);
        h = self.dec_res.apply(tape, bp, h);
        for conv in &self.dec_up {
            h = tape.upsample_nearest2(tape.gelu(h));
            h = conv.apply(tape, bp, h);
        }
        let h = self.dec_out.apply(tape, bp, tape.gelu(h));
        Ok(tape.sigmoid(h))
    }

    /// Snap latents to codebook rows: token ids, exact row copies, and the
    /// straight-through tensor that decodes like the rows but carries the
    /// encoder's gradient.
    pub fn quantize<F: Scalar>(
        &self,
        tape: &Tape<F>,
        bp: &BoundParams,
        pre: Var,
    ) -> Quantized {
        let sh = tape.shape(pre);
        assert_eq!(sh[2], self.d, "latent depth {} != codebook depth {}", sh[2], self.d);
        let (b, cells) = (sh[0], sh[1]);
        let pre_v = tape.value(pre);
        let flat = pre_v.into_shape_with_order((b * cells, self.d)).expect("standard layout");
        let code_v = tape.value(bp.var(self.codebook));
        let code = code_v.into_shape_with_order((self.k, self.d)).expect("standard layout");
        let tokens = nearest_codebook_rows(flat.view(), code.view());
        let q = tape.embedding(bp.var(self.codebook), &tokens);
        let q = tape.reshape(q, &[b, cells, self.d]);
        let st = tape.add(pre, tape.detach(tape.sub(q, pre)));
        Quantized { tokens, quantized: q, straight_through: st }
    }

    /// Full autoencoding pass with the three-term training loss.
    pub fn forward<F: Scalar>(
        &self,
        tape: &Tape<F>,
        bp: &BoundParams,
        x: Var,
        beta: f64,
    ) -> Result<VqForward, ModelError> {
        let pre = self.encode(tape, bp, x)?;
        let q = self.quantize(tape, bp, pre);
        let recon = self.decode(tape, bp, q.straight_through)?;
        let losses = vq_losses(tape, x, recon, pre, q.quantized, beta);
        Ok(VqForward { pre_quant: pre, quantized: q, recon, losses })
    }

    /// Tokenize frames `[T, C, H, W]` (values in [0,1]) without autograd
    /// bookkeeping; frames are processed in small chunks.
    pub fn tokenize_frames<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        frames: &ArrayD<F>,
    ) -> Result<Vec<u16>, ModelError> {
        let t = frames.shape()[0];
        let mut out = Vec::with_capacity(t * self.grid_len());
        for start in (0..t).step_by(8) {
            let len = (t - start).min(8);
            let chunk = frames.slice_axis(ndarray::Axis(0), ndarray::Slice::from(start..start + len));
            let tape = Tape::new();
            let bp = store.bind_frozen(&tape);
            let x = tape.constant(chunk.to_owned().into_dyn());
            let pre = self.encode(&tape, &bp, x)?;
            let q = self.quantize(&tape, &bp, pre);
            out.extend(q.tokens.iter().map(|&id| id as u16));
        }
        Ok(out)
    }

    /// Decode token grids `[B, h·w]` back to images `[B, C, H, W]`.
    pub fn decode_tokens<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        tokens: &[usize],
        b: usize,
    ) -> Result<ArrayD<F>, ModelError> {
        let cells = self.grid_len();
        if tokens.len() != b * cells {
            return Err(ModelError::Shape(format!(
                "expected {b}×{cells} tokens, got {}",
                tokens.len()
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.k) {
            return Err(ModelError::Shape(format!("token {bad} outside codebook of {}", self.k)));
        }
        let tape = Tape::new();
        let bp = store.bind_frozen(&tape);
        let q = tape.embedding(bp.var(self.codebook), tokens);
        let q = tape.reshape(q, &[b, cells, self.d]);
        let img = self.decode(&tape, &bp, q)?;
        Ok(tape.value(img))
    }

    /// Re-seed the codebook from observed encoder outputs (rows sampled with
    /// replacement plus a small jitter); avoids a dead codebook when the
    /// random init sits far from the encoder's output distribution.
    pub fn reset_codebook_from<F: Scalar>(
        &self,
        store: &mut ParamStore<F>,
        latents: ArrayView2<F>,
        rng: &mut ChaCha8Rng,
    ) {
        let n = latents.nrows();
        assert!(n > 0, "need at least one latent vector");
        let mut code = Array2::<F>::zeros((self.k, self.d));
        for row in 0..self.k {
            let src = rng.gen_range(0..n);
            for col in 0..self.d {
                let jitter = F::cast(rng.gen_range(-0.01..0.01));
                code[[row, col]] = latents[[src, col]] + jitter;
            }
        }
        store.set(self.codebook, code.into_dyn());
    }
}

pub struct Quantized {
    pub tokens: Vec<usize>,
    pub quantized: Var,
    pub straight_through: Var,
}

pub struct VqForward {
    pub pre_quant: Var,
    pub quantized: Quantized,
    pub recon: Var,
    pub losses: VqLosses,
}

pub struct VqLosses {
    pub total: Var,
    pub recon: Var,
    pub codebook: Var,
    pub commitment: Var,
}

/// recon MSE + ‖sg(pre) − q‖² + β‖pre − sg(q)‖², each term a mean over
/// elements. The codebook term updates only the codebook, the commitment
/// term only the encoder.
pub fn vq_losses<F: Scalar>(
    tape: &Tape<F>,
    x: Var,
    recon: Var,
    pre: Var,
    quantized: Var,
    beta: f64,
) -> VqLosses {
    let recon_l = tape.mean(tape.square(tape.sub(recon, x)));
    let codebook_l = tape.mean(tape.square(tape.sub(tape.detach(pre), quantized)));
    let commitment_l = tape.mean(tape.square(tape.sub(pre, tape.detach(quantized))));
    let total = tape.add(
        tape.add(recon_l, codebook_l),
        tape.mul_scalar(commitment_l, F::cast(beta)),
    );
    VqLosses { total, recon: recon_l, codebook: codebook_l, commitment: commitment_l }
}

/// Nearest codebook row per latent (squared Euclidean), ties to the lowest
/// index.
pub fn nearest_codebook_rows<F: Scalar>(latents: ArrayView2<F>, codebook: ArrayView2<F>) -> Vec<usize> {
    assert_eq!(latents.ncols(), codebook.ncols(), "latent/codebook depth mismatch");
    let k = codebook.nrows();
    assert!(k >= 2, "codebook needs at least two rows");
    let mut out = Vec::with_capacity(latents.nrows());
    for row in latents.rows() {
        let mut best = 0usize;
        let mut best_d = F::infinity();
        for (idx, code) in codebook.rows().into_iter().enumerate() {
            let mut d = F::zero();
            for (a, b) in row.iter().zip(code.iter()) {
                let diff = *a - *b;
                d = d + diff * diff;
            }
            if d < best_d {
                best_d = d;
                best = idx;
            }
        }
        out.push(best);
    }
    out
}

/// Frames stored as u8 CHW planes; batches are materialized on demand as
/// [B, C, H, W] float tensors scaled to [0,1].
pub struct FrameBank {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    data: Vec<u8>,
}

impl FrameBank {
    pub fn new(h: usize, w: usize, c: usize) -> FrameBank {
        FrameBank { h, w, c, data: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.c * self.h * self.w)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Append one frame given in HWC order (the on-disk video layout).
    pub fn push_hwc(&mut self, frame: &[u8]) {
        assert_eq!(frame.len(), self.h * self.w * self.c, "frame size mismatch");
        let base = self.data.len();
        self.data.resize(base + frame.len(), 0);
        let plane = self.h * self.w;
        for y in 0..self.h {
            for x in 0..self.w {
                for ch in 0..self.c {
                    self.data[base + ch * plane + y * self.w + x] =
                        frame[(y * self.w + x) * self.c + ch];
                }
            }
        }
    }

    pub fn batch<F: Scalar>(&self, idxs: &[usize]) -> ArrayD<F> {
        let frame_len = self.c * self.h * self.w;
        let mut out = Vec::with_capacity(idxs.len() * frame_len);
        let scale = F::cast(1.0 / 255.0);
        for &i in idxs {
            assert!(i < self.len(), "frame index out of range");
            out.extend(
                self.data[i * frame_len..(i + 1) * frame_len]
                    .iter()
                    .map(|&v| F::cast(v as f64) * scale),
            );
        }
        ArrayD::from_shape_vec(IxDyn(&[idxs.len(), self.c, self.h, self.w]), out)
            .expect("batch shape")
    }
}

#[derive(Clone, Debug)]
pub struct VqTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for VqTrainConfig {
    fn default() -> VqTrainConfig {
        VqTrainConfig { steps: 600, batch: 16, lr: 3e-4, beta: 0.25, seed: 7, log_every: 25 }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct VqTrainLogRow {
    pub step: usize,
    pub total: f64,
    pub recon: f64,
    pub codebook: f64,
    pub commitment: f64,
}

/// Train a tokenizer on independent frames sampled with replacement.
/// Returns the parameter store, the model handle, and the loss log.
pub fn train_vqvae(
    cfg: &ModelConfig,
    tcfg: &VqTrainConfig,
    bank: &FrameBank,
) -> Result<(ParamStore<f32>, VqVae, Vec<VqTrainLogRow>), ModelError> {
    if bank.is_empty() {
        return Err(ModelError::Config("empty frame set".into()));
    }
    if bank.h != cfg.image_side || bank.w != cfg.image_side || bank.c != cfg.image_channels {
        return Err(ModelError::Config(format!(
            "frame bank {}×{}×{} does not match configured {}×{}×{}",
            bank.h, bank.w, bank.c, cfg.image_side, cfg.image_side, cfg.image_channels
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut store = ParamStore::<f32>::new();
    let vq = VqVae::init(&mut store, &mut rng, cfg);

    // Data-dependent codebook seeding from the first batch's latents.
    {
        let idxs: Vec<usize> = (0..tcfg.batch).map(|_| rng.gen_range(0..bank.len())).collect();
        let tape = Tape::new();
        let bp = store.bind_frozen(&tape);
        let x = tape.constant(bank.batch::<f32>(&idxs));
        let pre = vq.encode(&tape, &bp, x)?;
        let v = tape.value(pre);
        let cells = v.shape()[1];
        let flat = v.into_shape_with_order((tcfg.batch * cells, vq.d)).expect("standard layout");
        vq.reset_codebook_from(&mut store, flat.view(), &mut rng);
    }

    let log = train_vqvae_steps(cfg, tcfg, bank, &mut store, &vq, 0, &mut rng)?;
    Ok((store, vq, log))
}

/// Continue optimizing an existing tokenizer (e.g. after loading a
/// checkpoint); skips the data-dependent codebook seeding that fresh runs
/// perform. Logged step numbers carry on from `start_step` and optimizer
/// moments start fresh.
pub fn train_vqvae_steps(
    cfg: &ModelConfig,
    tcfg: &VqTrainConfig,
    bank: &FrameBank,
    store: &mut ParamStore<f32>,
    vq: &VqVae,
    start_step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<VqTrainLogRow>, ModelError> {
    if bank.is_empty() {
        return Err(ModelError::Config("empty frame set".into()));
    }
    if bank.h != cfg.image_side || bank.w != cfg.image_side || bank.c != cfg.image_channels {
        return Err(ModelError::Config(format!(
            "frame bank {}×{}×{} does not match configured {}×{}×{}",
            bank.h, bank.w, bank.c, cfg.image_side, cfg.image_side, cfg.image_channels
        )));
    }
    let mut adam = Adam::new();
    let mut log = Vec::new();
    for step in 0..tcfg.steps {
        let idxs: Vec<usize> = (0..tcfg.batch).map(|_| rng.gen_range(0..bank.len())).collect();
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let x = tape.constant(bank.batch::<f32>(&idxs));
        let fwd = vq.forward(&tape, &bp, x, tcfg.beta)?;
        let mut grads = tape.backward(fwd.losses.total);
        let mut param_grads = bp.collect_grads(&mut grads);
        adam.step(store, &mut param_grads, tcfg.lr, None);
        if step % tcfg.log_every == 0 || step + 1 == tcfg.steps {
            let row = VqTrainLogRow {
                step: start_step + step,
                total: tape.scalar_value(fwd.losses.total) as f64,
                recon: tape.scalar_value(fwd.losses.recon) as f64,
                codebook: tape.scalar_value(fwd.losses.codebook) as f64,
                commitment: tape.scalar_value(fwd.losses.commitment) as f64,
            };
            log::info!(
                "vqvae step {}: total {:.5} recon {:.5} codebook {:.5} commit {:.5}",
                row.step, row.total, row.recon, row.codebook, row.commitment
            );
            log.push(row);
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use mage_datagen::types::DatasetKind;

    fn tiny_cfg() -> ModelConfig {
        // 16×16 inputs with n=4 → 4×4 grids keep conv tests fast.
        let mut cfg = ModelConfig::desk(DatasetKind::SingleMnist);
        cfg.image_side = 16;
        cfg.codebook_dim = 8;
        cfg.codebook_size = 16;
        cfg
    }

    fn tiny_model<F: Scalar>(seed: u64) -> (ParamStore<F>, VqVae, ModelConfig) {
        let cfg = tiny_cfg();
        let mut store = ParamStore::<F>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vq = VqVae::init(&mut store, &mut rng, &cfg);
        (store, vq, cfg)
    }

    #[test]
    fn nearest_row_prefers_smaller_distance_then_lower_index() {
        let code = ndarray::arr2(&[[0.0f64, 0.0], [1.0, 1.0]]);
        let cells = ndarray::arr2(&[[0.2f64, 0.1], [0.9, 0.8], [0.5, 0.5]]);
        let tokens = nearest_codebook_rows(cells.view(), code.view());
        assert_eq!(tokens, vec![0, 1, 0], "equidistant cell goes to the lowest index");

        // Exact match lands on its own row with zero error.
        let mut rows = Array2::<f64>::zeros((4, 3));
        for i in 0..4 {
            for j in 0..3 {
                rows[[i, j]] = (i * 3 + j) as f64 * 0.25;
            }
        }
        let probe = rows.row(2).insert_axis(ndarray::Axis(0)).to_owned();
        assert_eq!(nearest_codebook_rows(probe.view(), rows.view()), vec![2]);

        // Brute-force oracle over random cells.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let code = Array2::<f64>::from_shape_fn((7, 4), |_| rng.gen_range(-1.0..1.0));
        let cells = Array2::<f64>::from_shape_fn((40, 4), |_| rng.gen_range(-1.0..1.0));
        let got = nearest_codebook_rows(cells.view(), code.view());
        for (i, cell) in cells.rows().into_iter().enumerate() {
            let dists: Vec<f64> = code
                .rows()
                .into_iter()
                .map(|r| r.iter().zip(cell.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let best = dists
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap()
                .0;
            assert_eq!(got[i], best);
        }
    }

    #[test]
    fn shapes_round_trip_for_both_resolutions() {
        for (kind, hw, c) in [(DatasetKind::SingleMnist, 64, 1), (DatasetKind::CaterV1, 128, 3)] {
            let cfg = ModelConfig::desk(kind);
            let mut store = ParamStore::<f32>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let vq = VqVae::init(&mut store, &mut rng, &cfg);
            let tape = Tape::new();
            let bp = store.bind(&tape);
            let x = tape.constant(ArrayD::from_elem(IxDyn(&[1, c, hw, hw]), 0.5f32));
            let pre = vq.encode(&tape, &bp, x).unwrap();
            assert_eq!(tape.shape(pre), vec![1, 256, cfg.codebook_dim]);
            let q = vq.quantize(&tape, &bp, pre);
            let img = vq.decode(&tape, &bp, q.straight_through).unwrap();
            assert_eq!(tape.shape(img), vec![1, c, hw, hw]);
            let v = tape.value(img);
            assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0 && *x <= 1.0));
        }
    }

    #[test]
    fn identical_images_get_identical_latents_and_tokens() {
        let (store, vq, cfg) = tiny_model::<f32>(2);
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let mut img = ArrayD::from_elem(IxDyn(&[2, 1, cfg.image_side, cfg.image_side]), 0.1f32);
        for y in 0..8 {
            img[[0, 0, y, 3]] = 0.9;
            img[[1, 0, y, 3]] = 0.9;
        }
        let pre = vq.encode(&tape, &bp, tape.constant(img)).unwrap();
        let v = tape.value(pre);
        let q = vq.quantize(&tape, &bp, pre);
        for cell in 0..16 {
            for ch in 0..vq.d {
                assert_eq!(v[[0, cell, ch]], v[[1, cell, ch]]);
            }
            assert_eq!(q.tokens[cell], q.tokens[16 + cell]);
        }
    }

    #[test]
    fn quantization_is_idempotent_with_exact_row_copies() {
        let (store, vq, _) = tiny_model::<f64>(3);
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pre = tape.leaf(init::normal(&mut rng, &[1, 16, vq.d], 0.0, 1.0));
        let q1 = vq.quantize(&tape, &bp, pre);
        // Rows are exact copies of codebook entries.
        let code = tape.value(bp.var(vq.codebook));
        let qv = tape.value(q1.quantized);
        for cell in 0..16 {
            for ch in 0..vq.d {
                assert_eq!(qv[[0, cell, ch]], code[[q1.tokens[cell], ch]]);
            }
        }
        // Re-quantizing the quantized tensor returns the same tokens.
        let q2 = vq.quantize(&tape, &bp, q1.quantized);
        assert_eq!(q1.tokens, q2.tokens);
        let d = tape.scalar_value(tape.sum(tape.square(tape.sub(q2.quantized, q1.quantized))));
        assert_eq!(d, 0.0);
    }

    #[test]
    fn loss_terms_vanish_and_scale_as_stated() {
        let (store, vq, _) = tiny_model::<f64>(4);
        let tape = Tape::new();
        let bp = store.bind(&tape);
        // pre exactly equal to codebook rows → codebook and commitment are 0.
        let ids: Vec<usize> = (0..16).map(|i| i % vq.k).collect();
        let pre = tape.embedding(bp.var(vq.codebook), &ids);
        let pre = tape.reshape(pre, &[1, 16, vq.d]);
        let q = vq.quantize(&tape, &bp, pre);
        let x = tape.constant(ArrayD::from_elem(IxDyn(&[1, 1, 4, 4]), 0.3f64));
        let l = vq_losses(&tape, x, x, pre, q.quantized, 0.25);
        assert_eq!(tape.scalar_value(l.recon), 0.0, "x == recon");
        assert_eq!(tape.scalar_value(l.codebook), 0.0);
        assert_eq!(tape.scalar_value(l.commitment), 0.0);

        // Doubling beta doubles exactly the commitment share of the total.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pre = tape.leaf(init::normal(&mut rng, &[1, 16, vq.d], 0.0, 1.0));
        let q = vq.quantize(&tape, &bp, pre);
        let y = tape.constant(ArrayD::from_elem(IxDyn(&[1, 1, 4, 4]), 0.6f64));
        let a = vq_losses(&tape, x, y, pre, q.quantized, 0.25);
        let b = vq_losses(&tape, x, y, pre, q.quantized, 0.5);
        assert_eq!(tape.scalar_value(a.recon), tape.scalar_value(b.recon));
        assert_eq!(tape.scalar_value(a.codebook), tape.scalar_value(b.codebook));
        assert_eq!(tape.scalar_value(a.commitment), tape.scalar_value(b.commitment));
        let (ta, tb) = (tape.scalar_value(a.total), tape.scalar_value(b.total));
        let commit = tape.scalar_value(a.commitment);
        assert!((tb - ta - 0.25 * commit).abs() < 1e-12);
    }

    #[test]
    fn all_zero_quantized_input_decodes_finite() {
        let (store, vq, cfg) = tiny_model::<f32>(5);
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let q = tape.constant(ArrayD::zeros(IxDyn(&[1, 16, vq.d])));
        let img = vq.decode(&tape, &bp, q).unwrap();
        let v = tape.value(img);
        assert_eq!(v.shape(), &[1, 1, cfg.image_side, cfg.image_side]);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn straight_through_gradient_matches_frozen_offset_oracle() {
        // Analytic gradient w.r.t. the pre-quant latents on the real graph
        // (quantizer on the forward path) must match finite differences of
        // the surrogate in which the quantization offset q0 − e0 and the
        // selected rows are held fixed — the identity-pass-through reading.
        let (store, vq, _) = tiny_model::<f64>(6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e0 = init::normal(&mut rng, &[1, 16, vq.d], 0.0, 1.0);
        let target = init::uniform(&mut rng, &[1, 1, 16, 16], 0.2, 0.8);
        // 16×16 output because tiny cfg is 16 pixels; decode gives [1,1,16,16].
        let beta = 0.25;

        // Real graph: analytic gradient.
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let e = tape.leaf(e0.clone());
        let q = vq.quantize(&tape, &bp, e);
        let recon = vq.decode(&tape, &bp, q.straight_through).unwrap();
        let x = tape.constant(target.clone());
        let l = vq_losses(&tape, x, recon, e, q.quantized, beta);
        let mut grads = tape.backward(l.total);
        let analytic = grads.take(e).unwrap();
        let q0 = tape.value(q.quantized);
        let base_tokens = q.tokens.clone();

        // Surrogate evaluator with frozen offset/rows.
        let eval = |e_val: &ArrayD<f64>| -> f64 {
            let tape = Tape::new();
            let bp = store.bind_frozen(&tape);
            let e = tape.constant(e_val.clone());
            let q0c = tape.constant(q0.clone());
            let dec_in = tape.add(e, tape.constant(&q0 - &e0));
            let recon = vq.decode(&tape, &bp, dec_in).unwrap();
            let x = tape.constant(target.clone());
            let recon_l = tape.scalar_value(tape.mean(tape.square(tape.sub(recon, x))));
            // codebook term: sg(e) frozen at e0 → constant, contributes 0 to FD.
            let commit = tape.scalar_value(tape.mean(tape.square(tape.sub(e, q0c))));
            recon_l + beta * commit
        };

        let h = 1e-5;
        let mut checked = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        while checked < 24 {
            let cell = rng.gen_range(0..16);
            let ch = rng.gen_range(0..vq.d);
            // Stay safely inside the Voronoi cell: skip coordinates whose
            // perturbation could flip the nearest row.
            let mut plus = e0.clone();
            plus[[0, cell, ch]] += h;
            let mut minus = e0.clone();
            minus[[0, cell, ch]] -= h;
            let flat_p = plus.clone().into_shape_with_order((16, vq.d)).unwrap();
            let flat_m = minus.clone().into_shape_with_order((16, vq.d)).unwrap();
            let code_val = store.get(vq.codebook).clone().into_shape_with_order((vq.k, vq.d)).unwrap();
            if nearest_codebook_rows(flat_p.view(), code_val.view()) != base_tokens
                || nearest_codebook_rows(flat_m.view(), code_val.view()) != base_tokens
            {
                continue;
            }
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let an = analytic[[0, cell, ch]];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(
                ((fd - an).abs() / denom) < 1e-4,
                "straight-through gradient mismatch at ({cell},{ch}): fd {fd} analytic {an}"
            );
            checked += 1;
        }
    }

    #[test]
    fn codebook_reseed_tracks_observed_latents() {
        let (mut store, vq, _) = tiny_model::<f32>(7);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let latents = Array2::<f32>::from_shape_fn((40, vq.d), |_| rng.gen_range(-2.0..2.0f32));
        vq.reset_codebook_from(&mut store, latents.view(), &mut rng);
        let code = store.get(vq.codebook).clone().into_shape_with_order((vq.k, vq.d)).unwrap();
        for row in code.rows() {
            let nearest = latents
                .rows()
                .into_iter()
                .map(|l| l.iter().zip(row.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f32>())
                .fold(f32::INFINITY, f32::min);
            assert!(nearest < 0.01 * vq.d as f32, "codebook row far from every latent");
        }
        // With a seeded codebook, real latents map to more than one entry.
        let tokens = nearest_codebook_rows(latents.view(), code.view());
        let distinct: std::collections::HashSet<usize> = tokens.iter().copied().collect();
        assert!(distinct.len() > 1, "codebook collapsed at init");
    }

    #[test]
    fn frame_bank_converts_hwc_to_chw_and_scales() {
        let mut bank = FrameBank::new(2, 2, 3);
        bank.push_hwc(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 102, 153]);
        assert_eq!(bank.len(), 1);
        let b = bank.batch::<f32>(&[0, 0]);
        assert_eq!(b.shape(), &[2, 3, 2, 2]);
        assert_eq!(b[[0, 0, 0, 0]], 1.0);
        assert_eq!(b[[0, 1, 0, 1]], 1.0);
        assert_eq!(b[[0, 2, 1, 0]], 1.0);
        assert!((b[[1, 0, 1, 1]] - 0.2).abs() < 1e-6);
        assert!((b[[0, 1, 1, 1]] - 0.4).abs() < 1e-6);
        assert!((b[[0, 2, 1, 1]] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn short_training_run_reduces_reconstruction_loss() {
        let cfg = tiny_cfg();
        let mut bank = FrameBank::new(16, 16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..64 {
            // Vertical bar at a random column on a dark background.
            let col = rng.gen_range(0..16usize);
            let mut frame = vec![10u8; 256];
            for y in 0..16 {
                frame[y * 16 + col] = 240;
            }
            bank.push_hwc(&frame);
        }
        let tcfg = VqTrainConfig { steps: 60, batch: 8, lr: 1e-3, beta: 0.25, seed: 3, log_every: 10 };
        let (_store, _vq, log) = train_vqvae(&cfg, &tcfg, &bank).unwrap();
        let first = log.first().unwrap().recon;
        let last = log.last().unwrap().recon;
        assert!(last < first, "reconstruction should improve: {first} → {last}");

        let empty = FrameBank::new(16, 16, 1);
        assert!(train_vqvae(&cfg, &tcfg, &empty).is_err());
    }
}

//! Parameter-holding building blocks: linear maps, layer norm, feed-forward,
//! and masked multi-head attention.
//!
//! A layer owns only [`ParamId`]s; each forward pass binds the parameter
//! store onto a fresh tape and passes the binding in. That keeps layers
//! usable at `f32` for training and `f64` for finite-difference checks
//! without duplication.

use mage_autograd::init;
use mage_autograd::params::{ParamId, ParamStore};
use mage_autograd::scalar::Scalar;
use mage_autograd::stats;
use mage_autograd::tape::{Tape, Var};
use mage_autograd::params::BoundParams;
use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Linear {
        let w = store.register(&format!("{name}.w"), init::xavier(rng, &[d_in, d_out], d_in, d_out));
        let b = bias.then(|| store.register(&format!("{name}.b"), init::zeros(&[d_out])));
        Linear { w, b }
    }

    /// Zero weight matrix with a constant bias; used where a map must start
    /// as the identity contribution (e.g. style scales initialized to 1).
    pub fn init_zero_with_bias<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias_value: f64,
    ) -> Linear {
        let w = store.register(&format!("{name}.w"), init::zeros(&[d_in, d_out]));
        let b = store.register(&format!("{name}.b"), init::full(&[d_out], bias_value));
        Linear { w, b: Some(b) }
    }

    pub fn apply<F: Scalar>(&self, tape: &Tape<F>, bp: &BoundParams, x: Var) -> Var {
        tape.linear(x, bp.var(self.w), self.b.map(|b| bp.var(b)))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub g: ParamId,
    pub b: ParamId,
}

impl LayerNorm {
    pub fn init<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize) -> LayerNorm {
        LayerNorm {
            g: store.register(&format!("{name}.g"), init::full(&[d], 1.0)),
            b: store.register(&format!("{name}.b"), init::zeros(&[d])),
        }
    }

    pub fn apply<F: Scalar>(&self, tape: &Tape<F>, bp: &BoundParams, x: Var) -> Var {
        tape.layer_norm(x, bp.var(self.g), bp.var(self.b), F::cast(LN_EPS))
    }
}

/// Two-layer feed-forward with GELU, hidden width 4d.
#[derive(Clone, Copy, Debug)]
pub struct Ffn {
    pub up: Linear,
    pub down: Linear,
}

impl Ffn {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
    ) -> Ffn {
        Ffn {
            up: Linear::init(store, rng, &format!("{name}.up"), d, 4 * d, true),
            down: Linear::init(store, rng, &format!("{name}.down"), 4 * d, d, true),
        }
    }

    pub fn apply<F: Scalar>(&self, tape: &Tape<F>, bp: &BoundParams, x: Var) -> Var {
        let h = tape.gelu(self.up.apply(tape, bp, x));
        self.down.apply(tape, bp, h)
    }
}

/// Projection parameters of one multi-head attention.
#[derive(Clone, Copy, Debug)]
pub struct Mha {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl Mha {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
    ) -> Mha {
        Mha {
            wq: Linear::init(store, rng, &format!("{name}.q"), d, d, true),
            wk: Linear::init(store, rng, &format!("{name}.k"), d, d, true),
            wv: Linear::init(store, rng, &format!("{name}.v"), d, d, true),
            wo: Linear::init(store, rng, &format!("{name}.o"), d, d, true),
        }
    }
}

/// 2-d convolution parameters plus their fixed stride/padding.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Conv {
        let fan_in = c_in * k * k;
        let fan_out = c_out * k * k;
        Conv {
            w: store.register(&format!("{name}.w"), init::xavier(rng, &[c_out, c_in, k, k], fan_in, fan_out)),
            b: store.register(&format!("{name}.b"), init::zeros(&[c_out])),
            stride,
            pad,
        }
    }

    pub fn apply<F: Scalar>(&self, tape: &Tape<F>, bp: &BoundParams, x: Var) -> Var {
        tape.conv2d(x, bp.var(self.w), Some(bp.var(self.b)), self.stride, self.pad)
    }
}

/// 3-d convolution parameters plus their fixed stride/padding.
#[derive(Clone, Copy, Debug)]
pub struct Conv3 {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: (usize, usize, usize),
    pub pad: (usize, usize, usize),
}

impl Conv3 {
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Conv3 {
        let fan_in = c_in * k * k * k;
        let fan_out = c_out * k * k * k;
        Conv3 {
            w: store.register(
                &format!("{name}.w"),
                init::xavier(rng, &[c_out, c_in, k, k, k], fan_in, fan_out),
            ),
            b: store.register(&format!("{name}.b"), init::zeros(&[c_out])),
            stride,
            pad,
        }
    }

    pub fn apply<F: Scalar>(&self, tape: &Tape<F>, bp: &BoundParams, x: Var) -> Var {
        tape.conv3d(x, bp.var(self.w), Some(bp.var(self.b)), self.stride, self.pad)
    }
}

/// Additive attention mask: 0 where attention is allowed, -inf where not.
/// Broadcast against score tensors of shape `[B, heads, Lq, Lk]`.
pub fn causal_mask<F: Scalar>(s: usize) -> ArrayD<F> {
    let mut m = ArrayD::zeros(IxDyn(&[s, s]));
    for q in 0..s {
        for k in (q + 1)..s {
            m[[q, k]] = F::neg_infinity();
        }
    }
    m
}

/// Key-padding mask `[B, 1, 1, L]` from per-row valid lengths.
pub fn key_padding_mask<F: Scalar>(valid: &[usize], l: usize) -> ArrayD<F> {
    let mut m = ArrayD::zeros(IxDyn(&[valid.len(), 1, 1, l]));
    for (b, &v) in valid.iter().enumerate() {
        assert!(v <= l, "valid length {v} exceeds padded length {l}");
        for k in v..l {
            m[[b, 0, 0, k]] = F::neg_infinity();
        }
    }
    m
}

/// Masked multi-head attention. `q_in: [B, Lq, d]`, `kv_in: [B, Lk, d]`;
/// returns the attended output `[B, Lq, d]` and the post-softmax weights
/// `[B, heads, Lq, Lk]`. The mask (if any) is added to the scores before
/// softmax, so -inf entries get exactly zero weight.
pub fn attend<F: Scalar>(
    tape: &Tape<F>,
    bp: &BoundParams,
    p: &Mha,
    heads: usize,
    q_in: Var,
    kv_in: Var,
    mask: Option<&ArrayD<F>>,
) -> (Var, Var) {
    let q_shape = tape.shape(q_in);
    let kv_shape = tape.shape(kv_in);
    let (b, lq, d) = (q_shape[0], q_shape[1], q_shape[2]);
    let lk = kv_shape[1];
    assert_eq!(kv_shape[0], b, "attention batch mismatch");
    assert_eq!(kv_shape[2], d, "attention width mismatch");
    assert_eq!(d % heads, 0, "width {d} not divisible by {heads} heads");
    let dh = d / heads;

    let split = |x: Var, l: usize| -> Var {
        let x = tape.reshape(x, &[b, l, heads, dh]);
        let x = tape.permute(x, &[0, 2, 1, 3]);
        tape.reshape(x, &[b * heads, l, dh])
    };
    let q = split(p.wq.apply(tape, bp, q_in), lq);
    let k = split(p.wk.apply(tape, bp, kv_in), lk);
    let v = split(p.wv.apply(tape, bp, kv_in), lk);

    let kt = tape.permute(k, &[0, 2, 1]);
    let scale = F::cast(1.0 / (dh as f64).sqrt());
    let scores = tape.mul_scalar(tape.bmm(q, kt), scale);
    let mut scores = tape.reshape(scores, &[b, heads, lq, lk]);
    if let Some(m) = mask {
        let m = tape.constant(m.clone());
        scores = tape.add(scores, m);
    }
    let weights = tape.softmax_last(scores);
    stats::record_attention_elements((b * heads * lq * lk) as u64);

    let w3 = tape.reshape(weights, &[b * heads, lq, lk]);
    let ctx = tape.bmm(w3, v);
    let ctx = tape.reshape(ctx, &[b, heads, lq, dh]);
    let ctx = tape.permute(ctx, &[0, 2, 1, 3]);
    let ctx = tape.reshape(ctx, &[b, lq, d]);
    (p.wo.apply(tape, bp, ctx), weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mage_autograd::init::seeded_rng;

    #[test]
    fn attention_rows_sum_to_one_under_any_mask() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = seeded_rng(3);
        let p = Mha::init(&mut store, &mut rng, "attn", 8);
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let q = tape.leaf(init::normal(&mut rng, &[2, 5, 8], 0.0, 1.0));
        let kv = tape.leaf(init::normal(&mut rng, &[2, 7, 8], 0.0, 1.0));
        let mask = key_padding_mask::<f64>(&[3, 7], 7);
        let (_, w) = attend(&tape, &bp, &p, 2, q, kv, Some(&mask));
        let wv = tape.value(w);
        for b in 0..2 {
            for h in 0..2 {
                for q in 0..5 {
                    let row: f64 = (0..7).map(|k| wv[[b, h, q, k]]).sum();
                    assert!((row - 1.0).abs() < 1e-12, "row sums to {row}");
                }
            }
        }
        // masked keys carry exactly zero weight
        for q in 0..5 {
            for k in 3..7 {
                assert_eq!(wv[[0, 0, q, k]], 0.0);
            }
        }
    }

    #[test]
    fn causal_mask_zeroes_future_weights_exactly() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = seeded_rng(4);
        let p = Mha::init(&mut store, &mut rng, "attn", 8);
        let tape = Tape::new();
        let bp = store.bind(&tape);
        let x = tape.leaf(init::normal(&mut rng, &[1, 4, 8], 0.0, 1.0));
        let (_, w) = attend(&tape, &bp, &p, 2, x, x, Some(&causal_mask(4)));
        let wv = tape.value(w);
        for h in 0..2 {
            for q in 0..4 {
                for k in (q + 1)..4 {
                    assert_eq!(wv[[0, h, q, k]], 0.0);
                }
            }
        }
    }
}

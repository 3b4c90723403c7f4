//! Graph node descriptors.
//!
//! Each [`Op`] records the parents of a node plus whatever forward-pass
//! byproducts the backward pass needs (e.g. layer-norm row statistics).
//! Values that are cheap to recompute (im2col buffers) are not saved.

use crate::tape::Var;
use ndarray::ArrayD;

#[derive(Debug)]
pub enum Op<F> {
    /// Input with no parents: parameter, constant, or detached value.
    Leaf,

    // Elementwise binary with numpy-style broadcasting.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),

    // Elementwise unary.
    Neg(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Tanh(Var),
    Sigmoid(Var),
    /// Gaussian error linear unit, tanh approximation (smooth everywhere, so
    /// finite-difference checks stay clean).
    Gelu(Var),
    Square(Var),
    AddScalar(Var),
    MulScalar(Var, F),
    Clamp {
        x: Var,
        lo: F,
        hi: F,
    },

    // Reductions.
    Sum(Var),
    Mean(Var),
    SumAxes {
        x: Var,
        axes: Vec<usize>,
        keep: bool,
    },
    MeanAxes {
        x: Var,
        axes: Vec<usize>,
        keep: bool,
    },

    // Linear algebra.
    /// `[m,k] @ [k,n]`.
    Matmul(Var, Var),
    /// `[b,m,k] @ [b,k,n]`.
    Bmm(Var, Var),
    /// `x @ w + b` where `x` is `[..., k]` and `w` is `[k, n]`.
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    /// Row gather: out `[ids.len(), d]` from table `[v, d]`.
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },

    // Shape.
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    SliceAxis {
        x: Var,
        axis: usize,
        start: usize,
    },

    // Fused neural-net ops.
    SoftmaxLast(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        /// Per-row mean, saved for backward; shape `[rows]`.
        mean: Vec<F>,
        /// Per-row `1/sqrt(var + eps)`, saved for backward; shape `[rows]`.
        inv_std: Vec<F>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    },
    /// Nearest-neighbour 2x upsampling of the last two axes.
    UpsampleNearest2(Var),
    /// Mean cross-entropy from logits `[n, k]` against class indices.
    CrossEntropyMean {
        logits: Var,
        targets: Vec<usize>,
        /// Row softmax saved for backward; shape `[n, k]`.
        softmax: ArrayD<F>,
    },
}

impl<F> Op<F> {
    /// Parents whose `needs_grad` flag propagates to this node.
    pub fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::Neg(x)
            | Op::Exp(x)
            | Op::Ln(x)
            | Op::Sqrt(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Gelu(x)
            | Op::Square(x)
            | Op::AddScalar(x)
            | Op::MulScalar(x, _)
            | Op::Clamp { x, .. }
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SumAxes { x, .. }
            | Op::MeanAxes { x, .. }
            | Op::Reshape(x)
            | Op::Permute { x, .. }
            | Op::SliceAxis { x, .. }
            | Op::SoftmaxLast(x)
            | Op::UpsampleNearest2(x) => vec![*x],
            Op::Matmul(a, b) | Op::Bmm(a, b) => vec![*a, *b],
            Op::Linear { x, w, b } => {
                let mut p = vec![*x, *w];
                if let Some(b) = b {
                    p.push(*b);
                }
                p
            }
            Op::Embedding { table, .. } => vec![*table],
            Op::Concat { xs, .. } => xs.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Conv2d { x, w, b, .. } | Op::Conv3d { x, w, b, .. } => {
                let mut p = vec![*x, *w];
                if let Some(b) = b {
                    p.push(*b);
                }
                p
            }
            Op::CrossEntropyMean { logits, .. } => vec![*logits],
        }
    }
}

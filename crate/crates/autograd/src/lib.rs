//! A small tape-based reverse-mode automatic differentiation engine over
//! [`ndarray`], sized for training compact convolutional and transformer
//! models on a single machine.
//!
//! Design notes:
//!
//! * A [`Tape`] owns an append-only arena of nodes. Building an expression
//!   pushes a node holding the forward value and an [`op::Op`] describing how
//!   to route gradients to its parents. [`Tape::backward`] walks the arena in
//!   reverse and returns gradients for the leaves.
//! * The graph is generic over [`Scalar`] so the exact same model code runs
//!   in `f32` for training and in `f64` for finite-difference gradient
//!   checks.
//! * Heavy kernels (matmul, batched matmul, im2col convolution, softmax,
//!   layer norm) live in [`exec`], which provides a sequential implementation
//!   and, behind the default `parallel` feature, a rayon-parallel one. The
//!   parallel kernels split work only along axes that leave each output
//!   element's reduction order unchanged, so both paths produce bit-identical
//!   results.
//! * No kernel fusion, no views: every op materializes a standard-layout
//!   array. At the model sizes this crate targets, clarity and determinism
//!   are worth more than the memory traffic.

pub mod check;
pub mod exec;
pub mod init;
pub mod op;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod stats;
pub mod tape;

mod backward;

pub use check::{grad_check, GradCheckReport};
pub use params::{BoundParams, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};

/// Convenience alias: dynamic-dimensional array of the engine's scalar type.
pub type TensorD<F> = ndarray::ArrayD<F>;

//! Seeded weight initializers. Draws happen in `f64` and are converted, so a
//! given seed produces the same weights whichever scalar type the model runs
//! in.

use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn zeros<F: Scalar>(shape: &[usize]) -> ArrayD<F> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn full<F: Scalar>(shape: &[usize], v: f64) -> ArrayD<F> {
    ArrayD::from_elem(IxDyn(shape), F::cast(v))
}

pub fn uniform<F: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> ArrayD<F> {
    let n: usize = shape.iter().product();
    let data: Vec<F> = (0..n).map(|_| F::cast(rng.gen_range(lo..hi))).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches count")
}

pub fn normal<F: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], mean: f64, std: f64) -> ArrayD<F> {
    let dist = Normal::new(mean, std).expect("valid normal");
    let n: usize = shape.iter().product();
    let data: Vec<F> = (0..n).map(|_| F::cast(dist.sample(rng))).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches count")
}

/// Glorot/Xavier uniform given explicit fan-in and fan-out.
pub fn xavier<F: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> ArrayD<F> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, -bound, bound)
}

/// Standard normal draws as an `f64`-sourced tensor; used for reparameterized
/// sampling where the draw must be identical across scalar types.
pub fn standard_normal<F: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<F> {
    normal(rng, shape, 0.0, 1.0)
}

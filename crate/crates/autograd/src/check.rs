//! Finite-difference gradient verification.
//!
//! Builds the graph in `f64`, backpropagates, then compares analytic
//! gradients against central differences at a sample of input elements.

use crate::tape::{Tape, Var};
use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn assert_below(&self, tol: f64) {
        assert!(
            self.max_rel_err < tol,
            "gradient check failed: max relative error {:.3e} >= {tol:.1e} \
             (abs {:.3e}, {} elements checked)",
            self.max_rel_err,
            self.max_abs_err,
            self.checked
        );
    }
}

/// Compare analytic and numeric gradients of `f` (which must build and return
/// a scalar) with respect to every tensor in `inputs`.
///
/// At most `max_checks_per_input` elements per input are probed (all of them
/// when the input is small); the probe positions are drawn from `seed`.
/// Relative error uses a small floor in the denominator so near-zero
/// gradients compare absolutely.
pub fn grad_check(
    f: impl Fn(&Tape<f64>, &[Var]) -> Var,
    inputs: &[ArrayD<f64>],
    step: f64,
    max_checks_per_input: usize,
    seed: u64,
) -> GradCheckReport {
    // analytic pass
    let tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = f(&tape, &vars);
    let mut grads = tape.backward(loss);
    let analytic: Vec<ArrayD<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| grads.take(*v).unwrap_or_else(|| ArrayD::zeros(x.raw_dim())))
        .collect();

    let eval = |xs: &[ArrayD<f64>]| -> f64 {
        let tape = Tape::<f64>::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = f(&tape, &vars);
        tape.scalar_value(loss)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work: Vec<ArrayD<f64>> = inputs.to_vec();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut checked = 0usize;
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        if n == 0 {
            continue;
        }
        let positions: Vec<usize> = if n <= max_checks_per_input {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, max_checks_per_input).into_vec()
        };
        for pos in positions {
            let orig = input.as_slice().expect("standard layout")[pos];
            {
                let s = work[i].as_slice_mut().expect("standard layout");
                s[pos] = orig + step;
            }
            let up = eval(&work);
            {
                let s = work[i].as_slice_mut().expect("standard layout");
                s[pos] = orig - step;
            }
            let down = eval(&work);
            {
                let s = work[i].as_slice_mut().expect("standard layout");
                s[pos] = orig;
            }
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[i].as_slice().expect("standard layout")[pos];
            let abs = (numeric - a).abs();
            let rel = abs / numeric.abs().max(a.abs()).max(1e-3);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    GradCheckReport { max_rel_err: max_rel, max_abs_err: max_abs, checked }
}

//! Adam optimizer with global-norm gradient clipping and a warmup + cosine
//! learning-rate schedule.

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use ndarray::ArrayD;
use std::collections::BTreeMap;

pub struct Adam<F: Scalar> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    /// First/second moment estimates, created lazily per parameter.
    moments: BTreeMap<usize, (ArrayD<F>, ArrayD<F>)>,
    steps: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, moments: BTreeMap::new(), steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Apply one update. `grads` pairs parameters with their gradients; when
    /// `clip_norm` is set, all gradients are rescaled together so their global
    /// L2 norm does not exceed it.
    pub fn step(
        &mut self,
        store: &mut ParamStore<F>,
        grads: &mut [(ParamId, ArrayD<F>)],
        lr: f64,
        clip_norm: Option<f64>,
    ) {
        if let Some(max_norm) = clip_norm {
            let sq: f64 = grads
                .iter()
                .map(|(_, g)| g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>())
                .sum();
            let norm = sq.sqrt();
            if norm > max_norm && norm > 0.0 {
                let scale = F::cast(max_norm / norm);
                for (_, g) in grads.iter_mut() {
                    g.mapv_inplace(|v| v * scale);
                }
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let b1 = F::cast(self.beta1);
        let b2 = F::cast(self.beta2);
        let one_m_b1 = F::cast(1.0 - self.beta1);
        let one_m_b2 = F::cast(1.0 - self.beta2);
        let lr_f = F::cast(lr);
        let eps = F::cast(self.eps);
        let inv_bc1 = F::cast(1.0 / bc1);
        let inv_bc2 = F::cast(1.0 / bc2);
        for (id, g) in grads.iter() {
            let (m, v) = self
                .moments
                .entry(id.0)
                .or_insert_with(|| (ArrayD::zeros(g.raw_dim()), ArrayD::zeros(g.raw_dim())));
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &gv| *m = b1 * *m + one_m_b1 * gv);
            ndarray::Zip::from(&mut *v)
                .and(g)
                .for_each(|v, &gv| *v = b2 * *v + one_m_b2 * gv * gv);
            let mut p = store.get(*id).clone();
            ndarray::Zip::from(&mut p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let mhat = m * inv_bc1;
                let vhat = v * inv_bc2;
                *p = *p - lr_f * mhat / (vhat.sqrt() + eps);
            });
            store.set(*id, p);
        }
    }
}

impl<F: Scalar> Default for Adam<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Linear warmup to `base`, then cosine decay to `base * floor_frac`.
pub fn warmup_cosine(step: u64, total: u64, base: f64, warmup: u64, floor_frac: f64) -> f64 {
    assert!(total > 0, "schedule over zero steps");
    let step = step.min(total);
    if warmup > 0 && step < warmup {
        return base * (step as f64 + 1.0) / warmup as f64;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = (step - warmup) as f64 / span;
    let floor = base * floor_frac;
    floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize f(p) = sum(p^2); gradient is 2p
        let mut store = ParamStore::<f32>::new();
        let id = store.register("p", ArrayD::from_elem(IxDyn(&[4]), 3.0f32));
        let mut adam = Adam::new();
        for _ in 0..500 {
            let g = store.get(id).mapv(|v| 2.0 * v);
            adam.step(&mut store, &mut [(id, g)], 0.05, None);
        }
        assert!(store.get(id).iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut store = ParamStore::<f32>::new();
        let id = store.register("p", ArrayD::zeros(IxDyn(&[2])));
        let before = store.get(id).clone();
        let g = ArrayD::from_shape_vec(IxDyn(&[2]), vec![30.0f32, 40.0]).unwrap(); // norm 50
        let mut adam = Adam::new();
        let mut gs = vec![(id, g)];
        adam.step(&mut store, &mut gs, 0.0, Some(1.0));
        let clipped = &gs[0].1;
        let norm: f32 = clipped.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        // direction preserved: 3-4-5 triangle
        assert!((clipped[0] - 0.6).abs() < 1e-5 && (clipped[1] - 0.8).abs() < 1e-5);
        // lr 0 leaves parameters untouched
        assert_eq!(store.get(id), &before);
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let base = 1e-3;
        let total = 1000;
        let warm = 100;
        assert!(warmup_cosine(0, total, base, warm, 0.1) < base * 0.02);
        assert!((warmup_cosine(99, total, base, warm, 0.1) - base).abs() < base * 0.02);
        let mid = warmup_cosine(550, total, base, warm, 0.1);
        assert!(mid < base && mid > base * 0.1);
        let end = warmup_cosine(1000, total, base, warm, 0.1);
        assert!((end - base * 0.1).abs() < base * 1e-6);
    }
}

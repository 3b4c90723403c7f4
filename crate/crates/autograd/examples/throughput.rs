//! Quick single-process throughput probe for the matmul kernel; prints
//! GFLOP/s for a few square sizes so training budgets can be sized.

use mage_autograd::exec;
use ndarray::Array2;
use std::time::Instant;

fn main() {
    for &n in &[128usize, 256, 512, 1024] {
        let a = Array2::<f32>::from_shape_fn((n, n), |(i, j)| ((i * 31 + j) % 17) as f32 * 0.1);
        let b = Array2::<f32>::from_shape_fn((n, n), |(i, j)| ((i * 7 + j) % 13) as f32 * 0.1);
        let reps = (256 / (n / 128).pow(3)).max(1);
        let t = Instant::now();
        let mut sink = 0.0f32;
        for _ in 0..reps {
            let c = exec::matmul(a.view(), b.view());
            sink += c[[0, 0]];
        }
        let secs = t.elapsed().as_secs_f64();
        let flops = 2.0 * (n as f64).powi(3) * reps as f64;
        println!("n={n:5} reps={reps:4} {:8.2} GFLOP/s (sink {sink:.1})", flops / secs / 1e9);
    }
}

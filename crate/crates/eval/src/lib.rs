//! Evaluation harness for the video generator: pixel similarity (PSNR/SSIM),
//! sample diversity under ambiguous captions, motion-end-frame speed
//! analysis, caption-composability trackers, and cross-attention heatmap
//! export. Metrics are pure functions over decoded videos; report assembly
//! can fan out over samples and still aggregates in a deterministic order.

pub mod attention;
pub mod compose;
pub mod metrics;
pub mod motion;
pub mod report;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("shape: {0}")]
    Shape(String),
    #[error("input: {0}")]
    Input(String),
    #[error("model: {0}")]
    Model(#[from] mage_model::ModelError),
}

/// Map an indexed computation over samples, in parallel when the `parallel`
/// feature is on, always returning results in input order.
pub fn map_samples<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

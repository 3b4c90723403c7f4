//! Model stack for the text-and-image conditioned video generator:
//! a vector-quantized frame tokenizer, a small text transformer, a
//! motion-anchor module fusing the first frame with the caption, and an
//! axial autoregressive generator over token grids.

pub mod anchor;
pub mod checkpoint;
pub mod config;
pub mod generator;
pub mod layers;
pub mod text;
pub mod train;
pub mod vq;

pub use config::ModelConfig;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("shape error: {0}")]
    Shape(String),
}

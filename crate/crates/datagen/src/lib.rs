//! Synthetic video-text datasets: moving handwritten digits on a dark canvas
//! and stylized tabletop scenes on a coordinate grid, each paired with an
//! explicit and an ambiguous caption.
//!
//! The pipeline is script-first: [`sampler`] draws a symbolic
//! [`types::SceneScript`] from a per-sample seed, [`render`] rasterizes it,
//! and [`caption`] writes (and re-parses) its captions. [`dataset`] ties
//! those together into on-disk dataset builds with manifests, fingerprints,
//! and split-exclusivity checking. Everything downstream of a seed is
//! deterministic — two builds of the same configuration are byte-identical,
//! whether generated in parallel or sequentially.

pub mod caption;
pub mod dataset;
pub mod glyphs;
pub mod render;
pub mod sampler;
pub mod types;

pub use caption::{describe_scene, parse_caption, CaptionMode};
pub use dataset::{build_dataset, check_split_exclusivity, DatasetConfig, ManifestRecord};
pub use render::render_scene;
pub use sampler::{compute_trajectories, sample_scene};
pub use types::{DatasetKind, SceneScript, Split, VideoTensor};

/// Errors surfaced by dataset construction and loading.
#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
}

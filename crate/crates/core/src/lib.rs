//! Image composition assessment with saliency-augmented multi-pattern pooling.
//!
//! The crate covers the whole desk-scale pipeline: spectral-residual saliency,
//! composition-pattern partitions, the pooling/fusion network with hand-written
//! reverse-mode gradients, (weighted) EMD training, content-bias analysis, and
//! the rater-consistency statistics used to validate score annotations.

pub mod bias;
pub mod cli;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod patterns;
pub mod raster;
pub mod saliency;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};

/// Number of score bins on the composition rating scale.
pub const NUM_SCORES: usize = 5;
/// Number of composition-relevant attributes.
pub const NUM_ATTRIBUTES: usize = 5;
/// Number of composition patterns.
pub const NUM_PATTERNS: usize = 8;

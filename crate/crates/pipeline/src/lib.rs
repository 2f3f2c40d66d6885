//! End-to-end cocoa mapping: scene sampling, the segmentation and
//! height networks, ensemble training, tiled inference, confidence
//! aggregation, threshold calibration and the downstream area, yield
//! and protected-area analytics.

pub mod analysis;
pub mod ensemble;
pub mod error;
pub mod evaluate;
pub mod infer;
pub mod model;
pub mod sampling;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

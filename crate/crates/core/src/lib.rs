//! Capability-boundary estimation for model-evaluation records.
//!
//! A capability boundary is a high conditional quantile (τ = 0.98 by default)
//! of post-training benchmark score as a function of `z = log10(pre-training FLOPs)`.
//! The crate provides:
//!
//! - [`records`]: ingestion and slicing of evaluation records,
//! - [`binning`]: group-aware equal-mass binning of log-compute,
//! - [`loss`]: the smoothed pinball objective and the exact check loss,
//! - [`estimators`]: constant, binwise, sigmoid and I-spline boundary fits,
//! - [`evaluation`]: pinball / coverage metrics and the rolling chronological protocol,
//! - [`design`]: budget-constrained balanced I-optimal selection of models to evaluate,
//! - [`diagnostics`]: size–time boundary, dominance, contamination shift test and PCA factors,
//! - [`synth`]: seeded synthetic data with a known conditional quantile and brute-force oracles.

pub mod binning;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod loss;
pub mod math;
pub mod records;
pub mod synth;

pub use error::{Error, Result};

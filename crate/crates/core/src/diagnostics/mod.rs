//! Case-study analyses: size–time boundary, small-model dominance,
//! contamination shift regression and latent-factor boundaries.

mod dominance;
mod pca;
mod shift;
mod size_time;

pub use dominance::{
    dominance_analysis, BoundaryStep, DominanceLabel, DominancePoint, DominanceReport, DEFAULT_SIZE_CUTOFF,
};
pub use pca::{jacobi_eigen, pca_boundary, Component, PcaReport};
pub use shift::{contamination_shift_test, ShiftPair, ShiftTestResult};
pub use size_time::{
    fit_size_time, LogBase, SizeTimeFit, SizeTimeParams, SizeTimePoint, MIN_PER_SIDE, REFERENCE_PARAMS,
};

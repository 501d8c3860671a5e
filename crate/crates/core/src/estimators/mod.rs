//! τ-quantile boundary estimators: constant, binwise constant, constrained
//! sigmoid and monotone I-spline.
//!
//! All fits minimise
//!
//! ```text
//! J(p) = (1/n) [ Σ_i ℓ_τ(y_i − q(z_i; p)) + λ ‖p‖² ]
//! ```
//!
//! where `ℓ_τ` is the smoothed pinball loss and `p` the unconstrained parameter
//! vector of the family. The ridge is added once to the *summed* loss, so its
//! relative weight shrinks as the sample grows; `J` is that objective divided by
//! `n` so reported objectives are on the same scale as the mean loss.

mod constant;
mod ispline;
mod optim;
mod sigmoid;

use serde::{Deserialize, Serialize};

use crate::binning::BinPartition;
use crate::error::{Error, Result};
use crate::loss::LossConfig;

pub use constant::{fit_binwise, fit_constant, golden_section, BinwiseParams};
pub use ispline::{fit_ispline, ISplineBasis, ISplineParams, DEFAULT_KNOT_COUNT, DEFAULT_ORDER};
pub use optim::{minimize, OptimOutcome};
pub use sigmoid::{fit_sigmoid, SigmoidParams};

pub const DEFAULT_LAMBDA_RIDGE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub iterations: usize,
    /// Initial Adam step size; halved whenever a step fails to decrease the objective.
    pub learning_rate: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Converged when the objective improves by less than this over `patience` iterations.
    pub tolerance: f64,
    pub patience: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            iterations: 2000,
            learning_rate: 0.05,
            restarts: 5,
            seed: 0,
            tolerance: 1e-10,
            patience: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub loss: LossConfig,
    pub lambda_ridge: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            loss: LossConfig::default(),
            lambda_ridge: DEFAULT_LAMBDA_RIDGE,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lambda_ridge >= 0.0 && self.lambda_ridge.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_ridge must be nonnegative, got {}",
                self.lambda_ridge
            )));
        }
        let o = &self.optimizer;
        if o.iterations == 0 || o.restarts == 0 || o.patience == 0 {
            return Err(Error::Config(
                "iterations, restarts and patience must be at least 1".into(),
            ));
        }
        if !(o.tolerance > 0.0) || !(o.learning_rate > 0.0) {
            return Err(Error::Config("tolerance and learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.optimizer.seed = seed;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Constant,
    Binwise,
    Sigmoid,
    Ispline,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Constant, Family::Binwise, Family::Sigmoid, Family::Ispline];

    pub fn name(self) -> &'static str {
        match self {
            Family::Constant => "constant",
            Family::Binwise => "binwise",
            Family::Sigmoid => "sigmoid",
            Family::Ispline => "ispline",
        }
    }

    /// Families with a monotone parametric shape need a few points and a z-spread.
    pub fn min_points(self) -> usize {
        match self {
            Family::Constant | Family::Binwise => 1,
            Family::Sigmoid | Family::Ispline => 4,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant" | "const" => Ok(Family::Constant),
            "binwise" | "bin" => Ok(Family::Binwise),
            "sigmoid" | "sig" => Ok(Family::Sigmoid),
            "ispline" | "i-spline" => Ok(Family::Ispline),
            other => Err(Error::Config(format!("unknown estimator family `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "lowercase")]
pub enum BoundaryParams {
    Constant { level: f64 },
    Binwise(BinwiseParams),
    Sigmoid(SigmoidParams),
    Ispline(ISplineParams),
}

/// A fitted boundary. Serializes as
/// `{family, params, tau, kappa, lambda_ridge, seed, objective, iterations}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryModel {
    #[serde(flatten)]
    pub params: BoundaryParams,
    pub tau: f64,
    pub kappa: f64,
    pub lambda_ridge: f64,
    pub seed: u64,
    /// Final value of the fitting objective.
    pub objective: f64,
    pub iterations: usize,
}

impl BoundaryModel {
    pub(crate) fn new(params: BoundaryParams, cfg: &FitConfig, objective: f64, iterations: usize) -> Self {
        BoundaryModel {
            params,
            tau: cfg.loss.tau,
            kappa: cfg.loss.kappa,
            lambda_ridge: cfg.lambda_ridge,
            seed: cfg.optimizer.seed,
            objective,
            iterations,
        }
    }

    pub fn family(&self) -> Family {
        match self.params {
            BoundaryParams::Constant { .. } => Family::Constant,
            BoundaryParams::Binwise(_) => Family::Binwise,
            BoundaryParams::Sigmoid(_) => Family::Sigmoid,
            BoundaryParams::Ispline(_) => Family::Ispline,
        }
    }

    /// Boundary value at `z`; `None` when a binwise model is asked outside its bins.
    pub fn predict(&self, z: f64) -> Option<f64> {
        match &self.params {
            BoundaryParams::Constant { level } => Some(*level),
            BoundaryParams::Binwise(p) => p.predict(z),
            BoundaryParams::Sigmoid(p) => Some(p.predict(z)),
            BoundaryParams::Ispline(p) => Some(p.predict(z)),
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            tau: self.tau,
            kappa: self.kappa,
        }
    }

    pub fn as_sigmoid(&self) -> Option<&SigmoidParams> {
        match &self.params {
            BoundaryParams::Sigmoid(p) => Some(p),
            _ => None,
        }
    }

    pub fn partition(&self) -> Option<&BinPartition> {
        match &self.params {
            BoundaryParams::Binwise(p) => Some(&p.partition),
            _ => None,
        }
    }
}

/// `predict` as a free function.
pub fn predict(m: &BoundaryModel, z: f64) -> Option<f64> {
    m.predict(z)
}

/// Per-family options that are not part of [`FitConfig`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyOptions {
    pub bins: usize,
    pub min_bin: usize,
    pub knot_count: usize,
    pub order: usize,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        FamilyOptions {
            bins: crate::binning::DEFAULT_BINS,
            min_bin: crate::binning::DEFAULT_MIN_BIN,
            knot_count: DEFAULT_KNOT_COUNT,
            order: DEFAULT_ORDER,
        }
    }
}

/// Dispatches to the fit for `family`.
pub fn fit_family(
    family: Family,
    data: &[(f64, f64)],
    opts: &FamilyOptions,
    cfg: &FitConfig,
) -> Result<BoundaryModel> {
    match family {
        Family::Constant => fit_constant(data, cfg),
        Family::Binwise => fit_binwise(data, opts.bins, opts.min_bin, cfg),
        Family::Sigmoid => fit_sigmoid(data, cfg),
        Family::Ispline => fit_ispline(data, opts.knot_count, opts.order, cfg),
    }
}

pub(crate) fn check_data(data: &[(f64, f64)], min_points: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Estimator("no data points".into()));
    }
    if data.len() < min_points {
        return Err(Error::Estimator(format!(
            "need at least {min_points} points, got {}",
            data.len()
        )));
    }
    if data.iter().any(|(z, y)| !z.is_finite() || !y.is_finite()) {
        return Err(Error::Estimator("data contains non-finite values".into()));
    }
    Ok(())
}

pub(crate) fn check_spread(data: &[(f64, f64)]) -> Result<()> {
    let lo = data.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = data.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Err(Error::DegenerateZ(format!("all {} points share z = {lo}", data.len())));
    }
    Ok(())
}

//! Size–time boundary model
//!
//! ```text
//! logit q(x, t) = α + β x + φ s(t) + δ g(t) + θ x g(t)
//! ```
//!
//! with `x` the log parameter count, `s(t)` days since the earliest record
//! divided by 365, and `g(t) = 1{t ≥ cutoff}`. Fitted by minimising the mean
//! smoothed pinball loss of `y − σ(·)`.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{minimize, FitConfig};
use crate::math::{logit, sigmoid};

/// Minimum number of points required on each side of the cutoff.
pub const MIN_PER_SIDE: usize = 10;
/// Default parameter count at which the headline boundary is reported.
pub const REFERENCE_PARAMS: f64 = 1.3e10;
const JITTER: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
}

impl LogBase {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            LogBase::Natural => v.ln(),
            LogBase::Ten => v.log10(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeTimePoint {
    /// Log parameter count.
    pub x: f64,
    pub t: NaiveDate,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeTimeParams {
    pub alpha_b: f64,
    pub beta_b: f64,
    pub phi_slope: f64,
    pub delta_b: f64,
    pub theta_b: f64,
    pub cutoff: NaiveDate,
    /// Origin of the time trend.
    pub start: NaiveDate,
}

impl SizeTimeParams {
    pub fn late(&self, t: NaiveDate) -> bool {
        t >= self.cutoff
    }

    pub fn years(&self, t: NaiveDate) -> f64 {
        (t - self.start).num_days() as f64 / 365.0
    }

    pub fn predictor(&self, x: f64, t: NaiveDate) -> f64 {
        let g = if self.late(t) { 1.0 } else { 0.0 };
        self.alpha_b + self.beta_b * x + self.phi_slope * self.years(t) + self.delta_b * g + self.theta_b * x * g
    }

    pub fn predict(&self, x: f64, t: NaiveDate) -> f64 {
        sigmoid(self.predictor(x, t))
    }

    /// Boundary at log size `x` with the time trend held at the cutoff.
    pub fn boundary_at(&self, x: f64, late: bool) -> f64 {
        let g = if late { 1.0 } else { 0.0 };
        let eta = self.alpha_b
            + self.beta_b * x
            + self.phi_slope * self.years(self.cutoff)
            + self.delta_b * g
            + self.theta_b * x * g;
        sigmoid(eta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeTimeFit {
    pub params: SizeTimeParams,
    pub log_base: LogBase,
    pub reference_params: f64,
    pub n_early: usize,
    pub n_late: usize,
    /// `β̂` (early) and `β̂ + θ̂` (late).
    pub size_effect_early: f64,
    pub size_effect_late: f64,
    /// Boundary at `reference_params`, time trend evaluated at the cutoff.
    pub q_reference_early: f64,
    pub q_reference_late: f64,
    pub objective: f64,
    pub iterations: usize,
}

/// Centred design: columns `[1, x − x̄, s − s̄, g, (x − x̄) g]`.
struct Problem {
    rows: Vec<[f64; 5]>,
    ys: Vec<f64>,
    cfg: FitConfig,
}

impl Problem {
    fn objective(&self, p: &[f64], grad: &mut [f64]) -> f64 {
        let mut total = 0.0;
        let mut g = [0.0; 5];
        for (r, &y) in self.rows.iter().zip(&self.ys) {
            let eta: f64 = r.iter().zip(p).map(|(a, b)| a * b).sum();
            let q = sigmoid(eta);
            let u = y - q;
            total += self.cfg.loss.loss(u);
            let w = -self.cfg.loss.grad(u) * q * (1.0 - q);
            for (gi, ri) in g.iter_mut().zip(r) {
                *gi += w * ri;
            }
        }
        let n = self.rows.len() as f64;
        let lambda = self.cfg.lambda_ridge;
        let mut ridge = 0.0;
        for i in 0..5 {
            ridge += p[i] * p[i];
            grad[i] = (g[i] + 2.0 * lambda * p[i]) / n;
        }
        (total + lambda * ridge) / n
    }
}

pub fn fit_size_time(
    data: &[SizeTimePoint],
    cutoff: NaiveDate,
    log_base: LogBase,
    reference_params: f64,
    cfg: &FitConfig,
) -> Result<SizeTimeFit> {
    cfg.validate()?;
    if !(reference_params > 0.0 && reference_params.is_finite()) {
        return Err(Error::Config(format!("reference size must be positive, got {reference_params}")));
    }
    if data.iter().any(|p| !p.x.is_finite() || !(0.0..=1.0).contains(&p.y)) {
        return Err(Error::Diagnostics("size-time data must have finite x and y in [0, 1]".into()));
    }
    let n_late = data.iter().filter(|p| p.t >= cutoff).count();
    let n_early = data.len() - n_late;
    if n_early < MIN_PER_SIDE || n_late < MIN_PER_SIDE {
        return Err(Error::Diagnostics(format!(
            "size-time model needs {MIN_PER_SIDE} points on each side of {cutoff}; got {n_early} before and {n_late} after"
        )));
    }
    let start = data.iter().map(|p| p.t).min().expect("nonempty");
    let years = |t: NaiveDate| (t - start).num_days() as f64 / 365.0;
    let n = data.len() as f64;
    let x_bar = data.iter().map(|p| p.x).sum::<f64>() / n;
    let s_bar = data.iter().map(|p| years(p.t)).sum::<f64>() / n;
    let rows: Vec<[f64; 5]> = data
        .iter()
        .map(|p| {
            let g = if p.t >= cutoff { 1.0 } else { 0.0 };
            let xc = p.x - x_bar;
            [1.0, xc, years(p.t) - s_bar, g, xc * g]
        })
        .collect();
    let ys: Vec<f64> = data.iter().map(|p| p.y).collect();

    let mut sorted = ys.clone();
    sorted.sort_by(f64::total_cmp);
    let top = sorted[((cfg.loss.tau * n).ceil() as usize).clamp(1, data.len()) - 1];
    let base = [logit(top.clamp(0.01, 0.99)), 0.0, 0.0, 0.0, 0.0];

    let problem = Problem {
        rows,
        ys,
        cfg: cfg.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.optimizer.seed);
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    for k in 0..cfg.optimizer.restarts {
        let mut x0 = base;
        if k > 0 {
            for v in x0.iter_mut() {
                *v += rng.random_range(-JITTER..=JITTER);
            }
        }
        let out = minimize(|p, g| problem.objective(p, g), x0.to_vec(), &cfg.optimizer);
        if best.as_ref().is_none_or(|b| out.value < b.0) {
            best = Some((out.value, out.x, out.iterations));
        }
    }
    let (objective, p, iterations) = best.expect("at least one restart");
    if !objective.is_finite() {
        return Err(Error::numerical("fit_size_time", "objective is not finite"));
    }

    // undo the centring
    let params = SizeTimeParams {
        alpha_b: p[0] - p[1] * x_bar - p[2] * s_bar,
        beta_b: p[1],
        phi_slope: p[2],
        delta_b: p[3] - p[4] * x_bar,
        theta_b: p[4],
        cutoff,
        start,
    };
    let x_ref = log_base.apply(reference_params);
    Ok(SizeTimeFit {
        size_effect_early: params.beta_b,
        size_effect_late: params.beta_b + params.theta_b,
        q_reference_early: params.boundary_at(x_ref, false),
        q_reference_late: params.boundary_at(x_ref, true),
        params,
        log_base,
        reference_params,
        n_early,
        n_late,
        objective,
        iterations,
    })
}

//! Smoothed pinball (softplus-smoothed check) loss and the exact check loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};

pub const DEFAULT_TAU: f64 = 0.98;
pub const DEFAULT_KAPPA: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub kappa: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: DEFAULT_TAU,
            kappa: DEFAULT_KAPPA,
        }
    }
}

impl LossConfig {
    pub fn new(tau: f64, kappa: f64) -> Result<Self> {
        let c = LossConfig { tau, kappa };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        Ok(())
    }

    #[inline]
    pub fn loss(&self, u: f64) -> f64 {
        smoothed_pinball(u, self)
    }

    #[inline]
    pub fn grad(&self, u: f64) -> f64 {
        smoothed_pinball_grad(u, self)
    }
}

/// `softplus(κu)/κ + (τ − 1)u`.
#[inline]
pub fn smoothed_pinball(u: f64, c: &LossConfig) -> f64 {
    softplus(c.kappa * u) / c.kappa + (c.tau - 1.0) * u
}

/// Derivative of [`smoothed_pinball`] in `u`: `σ(κu) + τ − 1`.
#[inline]
pub fn smoothed_pinball_grad(u: f64, c: &LossConfig) -> f64 {
    sigmoid(c.kappa * u) + c.tau - 1.0
}

/// Check loss `max(τu, (τ − 1)u)`.
#[inline]
pub fn exact_pinball(u: f64, tau: f64) -> f64 {
    (tau * u).max((tau - 1.0) * u)
}

/// Arithmetic mean of the smoothed loss over residuals.
pub fn mean_smoothed(residuals: impl IntoIterator<Item = f64>, c: &LossConfig) -> Option<f64> {
    let (sum, n) = residuals
        .into_iter()
        .fold((0.0, 0usize), |(s, n), u| (s + smoothed_pinball(u, c), n + 1));
    (n > 0).then(|| sum / n as f64)
}

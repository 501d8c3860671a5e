//! Argument groups shared by several subcommands.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use capbound::binning::{DEFAULT_BINS, DEFAULT_MIN_BIN};
use capbound::estimators::{
    FamilyOptions, FitConfig, OptimizerConfig, DEFAULT_KNOT_COUNT, DEFAULT_LAMBDA_RIDGE, DEFAULT_ORDER,
};
use capbound::loss::{LossConfig, DEFAULT_KAPPA, DEFAULT_TAU};
use capbound::records::{load_records, parse_date, Dataset, Format};
use chrono::NaiveDate;
use clap::Args;
use serde::Serialize;

#[derive(Args, Clone, Debug, Serialize)]
pub struct DataArgs {
    /// Evaluation records (CSV or JSON).
    #[arg(long)]
    pub data: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<Format>,
    /// Keep raw pretrained checkpoints (dropped by default).
    #[arg(long)]
    pub include_pretrained: bool,
    /// Keep only records released strictly before this date.
    #[arg(long, value_parser = date)]
    pub before: Option<NaiveDate>,
}

impl DataArgs {
    pub fn load(&self) -> Result<Dataset> {
        let format = match self.format {
            Some(f) => f,
            None => Format::from_path(&self.data)?,
        };
        let d = load_records(&self.data, format).with_context(|| format!("loading {}", self.data.display()))?;
        Ok(d.filter(|r| {
            (self.include_pretrained || r.flags.post_trained()) && self.before.is_none_or(|b| r.release_date < b)
        }))
    }
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct FitArgs {
    /// Quantile level.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Softplus sharpness of the smoothed pinball loss.
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    pub kappa: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_RIDGE)]
    pub lambda_ridge: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
}

impl FitArgs {
    pub fn config(&self) -> FitConfig {
        let d = OptimizerConfig::default();
        FitConfig {
            loss: LossConfig {
                tau: self.tau,
                kappa: self.kappa,
            },
            lambda_ridge: self.lambda_ridge,
            optimizer: OptimizerConfig {
                seed: self.seed,
                restarts: self.restarts.unwrap_or(d.restarts),
                iterations: self.iterations.unwrap_or(d.iterations),
                ..d
            },
        }
    }
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct FamilyArgs {
    /// Target number of equal-mass compute bins.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    /// Minimum points per bin before merging.
    #[arg(long, default_value_t = DEFAULT_MIN_BIN)]
    pub min_bin: usize,
    /// Interior knots of the I-spline.
    #[arg(long, default_value_t = DEFAULT_KNOT_COUNT)]
    pub knots: usize,
    /// I-spline order.
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub order: usize,
}

impl FamilyArgs {
    pub fn options(&self) -> FamilyOptions {
        FamilyOptions {
            bins: self.bins,
            min_bin: self.min_bin,
            knot_count: self.knots,
            order: self.order,
        }
    }
}

pub fn date(s: &str) -> std::result::Result<NaiveDate, String> {
    parse_date(s).ok_or_else(|| format!("invalid date `{s}` (expected YYYY-MM-DD)"))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

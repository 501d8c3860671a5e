use serde::{Deserialize, Serialize};

use super::{check_data, BoundaryModel, BoundaryParams, FitConfig};
use crate::binning::{build_bins, BinPartition};
use crate::error::Result;
use crate::loss::{smoothed_pinball, LossConfig};

const LEVEL_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinwiseParams {
    pub partition: BinPartition,
    pub levels: Vec<f64>,
}

impl BinwiseParams {
    pub fn predict(&self, z: f64) -> Option<f64> {
        self.partition.assign(z).index().map(|b| self.levels[b])
    }
}

/// Golden-section minimisation of a unimodal function on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

fn mean_loss_at(ys: &[f64], c: f64, loss: &LossConfig) -> f64 {
    ys.iter().map(|&y| smoothed_pinball(y - c, loss)).sum::<f64>() / ys.len() as f64
}

/// Scalar level in `[0, 1]` minimising the mean smoothed pinball loss.
pub(crate) fn best_level(ys: &[f64], loss: &LossConfig) -> (f64, f64) {
    let c = golden_section(|c| mean_loss_at(ys, c, loss), 0.0, 1.0, LEVEL_TOL);
    (c, mean_loss_at(ys, c, loss))
}

pub fn fit_constant(data: &[(f64, f64)], cfg: &FitConfig) -> Result<BoundaryModel> {
    check_data(data, 1)?;
    cfg.validate()?;
    let ys: Vec<f64> = data.iter().map(|p| p.1).collect();
    let (level, objective) = best_level(&ys, &cfg.loss);
    Ok(BoundaryModel::new(BoundaryParams::Constant { level }, cfg, objective, 0))
}

/// Bins the training z-values, then fits an independent level per bin.
pub fn fit_binwise(data: &[(f64, f64)], bins: usize, min_bin: usize, cfg: &FitConfig) -> Result<BoundaryModel> {
    check_data(data, 1)?;
    cfg.validate()?;
    let zs: Vec<f64> = data.iter().map(|p| p.0).collect();
    let partition = build_bins(&zs, bins, min_bin)?;
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); partition.num_bins()];
    for &(z, y) in data {
        let b = partition.assign(z).index().expect("training point inside its own bins");
        groups[b].push(y);
    }
    let mut levels = Vec::with_capacity(groups.len());
    let mut total = 0.0;
    for ys in &groups {
        let (c, l) = best_level(ys, &cfg.loss);
        levels.push(c);
        total += l * ys.len() as f64;
    }
    let objective = total / data.len() as f64;
    Ok(BoundaryModel::new(
        BoundaryParams::Binwise(BinwiseParams { partition, levels }),
        cfg,
        objective,
        0,
    ))
}

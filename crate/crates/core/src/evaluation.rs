//! Boundary metrics (mean pinball loss, per-bin coverage) and the rolling
//! chronological protocol: fit on period `t`, validate on period `t + 1`
//! restricted to the overlapping compute range.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::{build_bins, BinPartition};
use crate::error::{Error, Result};
use crate::estimators::{fit_family, BoundaryModel, Family, FamilyOptions, FitConfig};
use crate::loss::{smoothed_pinball, LossConfig};
use crate::records::{overlap_of, partition_periods, Dataset, Overlap, PeriodPartition, ZInterval};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    InDistribution,
    OutOfDistribution,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::InDistribution => "id",
            Scope::OutOfDistribution => "ood",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinCoverage {
    pub bin: usize,
    pub n: usize,
    pub tau_hat: f64,
    /// `τ̂_b − τ`; negative means under-coverage.
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scope: Scope,
    /// Points that entered the metrics (inside the overlap and the bins).
    pub n_points: usize,
    pub mean_pinball: f64,
    pub coverage_by_bin: Vec<BinCoverage>,
    /// Fraction of evaluated points at or below the boundary.
    pub global_coverage: f64,
    /// `global_coverage − τ`.
    pub global_coverage_error: f64,
    /// Mean of `|τ̂_b − τ|` over nonempty bins.
    pub calibration_error: f64,
    pub overlap: Option<ZInterval>,
}

fn predict_all(model: &BoundaryModel, data: &[(f64, f64)]) -> Result<Vec<f64>> {
    data.iter()
        .map(|&(z, _)| {
            model
                .predict(z)
                .ok_or_else(|| Error::Evaluation(format!("z = {z} lies outside the model's bins")))
        })
        .collect()
}

/// Mean smoothed pinball loss of `model` over `data`.
pub fn mean_pinball(model: &BoundaryModel, data: &[(f64, f64)], loss: &LossConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Evaluation("mean pinball of an empty set".into()));
    }
    let preds = predict_all(model, data)?;
    let sum: f64 = data.iter().zip(&preds).map(|(&(_, y), q)| smoothed_pinball(y - q, loss)).sum();
    Ok(sum / data.len() as f64)
}

/// Per-bin empirical coverage. Points outside the partition (or outside a
/// binwise model's own bins) are dropped; empty bins are omitted.
pub fn coverage_by_bin(model: &BoundaryModel, data: &[(f64, f64)], bins: &BinPartition, tau: f64) -> Vec<BinCoverage> {
    let mut n = vec![0usize; bins.num_bins()];
    let mut covered = vec![0usize; bins.num_bins()];
    for &(z, y) in data {
        let (Some(b), Some(q)) = (bins.assign(z).index(), model.predict(z)) else {
            continue;
        };
        n[b] += 1;
        if y <= q {
            covered[b] += 1;
        }
    }
    (0..bins.num_bins())
        .filter(|&b| n[b] > 0)
        .map(|b| {
            let tau_hat = covered[b] as f64 / n[b] as f64;
            BinCoverage {
                bin: b,
                n: n[b],
                tau_hat,
                deviation: tau_hat - tau,
            }
        })
        .collect()
}

/// Full report on `data`, restricted to `overlap` when given and to the bins.
pub fn evaluate(
    model: &BoundaryModel,
    data: &[(f64, f64)],
    bins: &BinPartition,
    loss: &LossConfig,
    scope: Scope,
    overlap: Option<ZInterval>,
) -> Result<EvalReport> {
    let kept: Vec<(f64, f64)> = data
        .iter()
        .copied()
        .filter(|&(z, _)| overlap.is_none_or(|iv| iv.contains(z)))
        .filter(|&(z, _)| bins.assign(z).index().is_some() && model.predict(z).is_some())
        .collect();
    if kept.is_empty() {
        return Err(Error::Evaluation("no points inside the evaluation range".into()));
    }
    let mean = mean_pinball(model, &kept, loss)?;
    let bins_cov = coverage_by_bin(model, &kept, bins, loss.tau);
    let covered = kept
        .iter()
        .filter(|&&(z, y)| model.predict(z).is_some_and(|q| y <= q))
        .count();
    let global = covered as f64 / kept.len() as f64;
    let calibration = bins_cov.iter().map(|b| b.deviation.abs()).sum::<f64>() / bins_cov.len() as f64;
    Ok(EvalReport {
        scope,
        n_points: kept.len(),
        mean_pinball: mean,
        coverage_by_bin: bins_cov,
        global_coverage: global,
        global_coverage_error: global - loss.tau,
        calibration_error: calibration,
        overlap,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FamilyOutcome {
    Fitted {
        model: BoundaryModel,
        id: EvalReport,
        /// `None` when the validation period shares no compute range with training.
        ood: Option<EvalReport>,
    },
    Skipped {
        reason: String,
    },
}

impl FamilyOutcome {
    pub fn report(&self, scope: Scope) -> Option<&EvalReport> {
        match (self, scope) {
            (FamilyOutcome::Fitted { id, .. }, Scope::InDistribution) => Some(id),
            (FamilyOutcome::Fitted { ood, .. }, Scope::OutOfDistribution) => ood.as_ref(),
            (FamilyOutcome::Skipped { .. }, _) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: usize,
    pub train_period: String,
    pub valid_period: String,
    pub n_train: usize,
    pub n_valid: usize,
    pub overlap: Option<Overlap>,
    pub bins: Option<BinPartition>,
    pub families: BTreeMap<Family, FamilyOutcome>,
}

/// Averages over the splits where a family was fitted; `None` when it never was.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub splits_used: usize,
    pub splits_skipped: usize,
    pub id_pinball: Option<f64>,
    pub ood_pinball: Option<f64>,
    pub id_calibration_error: Option<f64>,
    pub ood_calibration_error: Option<f64>,
    pub id_coverage_error: Option<f64>,
    pub ood_coverage_error: Option<f64>,
}

/// Percent change of each summary metric relative to the constant baseline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RelativeSummary {
    pub id_pinball_pct: Option<f64>,
    pub ood_pinball_pct: Option<f64>,
    pub id_calibration_error_pct: Option<f64>,
    pub ood_calibration_error_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollingSummary {
    pub absolute: BTreeMap<Family, FamilySummary>,
    /// Present only when the constant family was evaluated.
    pub relative_to_constant: Option<BTreeMap<Family, RelativeSummary>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollingReport {
    pub task: String,
    pub splits: Vec<SplitReport>,
    pub summary: RollingSummary,
}

fn fit_and_score(
    family: Family,
    train: &[(f64, f64)],
    valid: &[(f64, f64)],
    bins: &BinPartition,
    overlap: Option<ZInterval>,
    opts: &FamilyOptions,
    cfg: &FitConfig,
    eval_loss: &LossConfig,
) -> FamilyOutcome {
    if train.len() < family.min_points() {
        return FamilyOutcome::Skipped {
            reason: format!("{} training points, {family} needs {}", train.len(), family.min_points()),
        };
    }
    let model = match fit_family(family, train, opts, cfg) {
        Ok(m) => m,
        Err(e) => return FamilyOutcome::Skipped { reason: e.to_string() },
    };
    let id = match evaluate(&model, train, bins, eval_loss, Scope::InDistribution, None) {
        Ok(r) => r,
        Err(e) => return FamilyOutcome::Skipped { reason: e.to_string() },
    };
    let ood = overlap.and_then(|iv| evaluate(&model, valid, bins, eval_loss, Scope::OutOfDistribution, Some(iv)).ok());
    FamilyOutcome::Fitted { model, id, ood }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Averages split-level metrics. Accepts splits from several tasks.
pub fn summarize<'a>(splits: impl IntoIterator<Item = &'a SplitReport> + Clone, families: &[Family]) -> RollingSummary {
    let mut absolute = BTreeMap::new();
    for &f in families {
        let outcomes: Vec<&FamilyOutcome> = splits.clone().into_iter().filter_map(|s| s.families.get(&f)).collect();
        let used: Vec<&FamilyOutcome> = outcomes
            .iter()
            .copied()
            .filter(|o| matches!(o, FamilyOutcome::Fitted { .. }))
            .collect();
        let metric = |scope: Scope, pick: fn(&EvalReport) -> f64| {
            mean_of(used.iter().filter_map(|o| o.report(scope)).map(pick))
        };
        absolute.insert(
            f,
            FamilySummary {
                splits_used: used.len(),
                splits_skipped: outcomes.len() - used.len(),
                id_pinball: metric(Scope::InDistribution, |r| r.mean_pinball),
                ood_pinball: metric(Scope::OutOfDistribution, |r| r.mean_pinball),
                id_calibration_error: metric(Scope::InDistribution, |r| r.calibration_error),
                ood_calibration_error: metric(Scope::OutOfDistribution, |r| r.calibration_error),
                id_coverage_error: metric(Scope::InDistribution, |r| r.global_coverage_error),
                ood_coverage_error: metric(Scope::OutOfDistribution, |r| r.global_coverage_error),
            },
        );
    }
    let relative_to_constant = absolute.get(&Family::Constant).cloned().map(|base| {
        let pct = |x: Option<f64>, b: Option<f64>| match (x, b) {
            (Some(x), Some(b)) if b != 0.0 => Some(100.0 * (x - b) / b),
            _ => None,
        };
        absolute
            .iter()
            .map(|(f, s)| {
                (
                    *f,
                    RelativeSummary {
                        id_pinball_pct: pct(s.id_pinball, base.id_pinball),
                        ood_pinball_pct: pct(s.ood_pinball, base.ood_pinball),
                        id_calibration_error_pct: pct(s.id_calibration_error, base.id_calibration_error),
                        ood_calibration_error_pct: pct(s.ood_calibration_error, base.ood_calibration_error),
                    },
                )
            })
            .collect()
    });
    RollingSummary {
        absolute,
        relative_to_constant,
    }
}

/// Settings for [`rolling_protocol`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollingConfig {
    pub families: Vec<Family>,
    pub options: FamilyOptions,
    pub fit: FitConfig,
    /// Loss used for the reported pinball metric; defaults to the fitting loss.
    #[serde(default)]
    pub eval_loss: Option<LossConfig>,
}

impl Default for RollingConfig {
    fn default() -> Self {
        RollingConfig {
            families: Family::ALL.to_vec(),
            options: FamilyOptions::default(),
            fit: FitConfig::default(),
            eval_loss: None,
        }
    }
}

/// Fits every family on each period and validates on the next one.
pub fn rolling_protocol(d: &Dataset, p: &PeriodPartition, task: &str, rc: &RollingConfig) -> Result<RollingReport> {
    d.require_task(task)?;
    rc.fit.validate()?;
    if rc.families.is_empty() {
        return Err(Error::Config("no estimator families requested".into()));
    }
    let periods = partition_periods(d, p);
    let points: Vec<Vec<(f64, f64)>> = periods.iter().map(|per| per.data.task_points(task)).collect();
    if points.iter().filter(|v| !v.is_empty()).count() < 2 {
        return Err(Error::Evaluation(format!(
            "task `{task}` needs at least two nonempty periods for a rolling split"
        )));
    }
    let eval_loss = rc.eval_loss.unwrap_or(rc.fit.loss);
    let mut families = rc.families.clone();
    families.sort();
    families.dedup();

    let splits: Vec<SplitReport> = (0..periods.len() - 1)
        .into_par_iter()
        .map(|t| {
            let (train, valid) = (&points[t], &points[t + 1]);
            let mut report = SplitReport {
                split: t,
                train_period: periods[t].label.clone(),
                valid_period: periods[t + 1].label.clone(),
                n_train: train.len(),
                n_valid: valid.len(),
                overlap: None,
                bins: None,
                families: BTreeMap::new(),
            };
            if train.is_empty() || valid.is_empty() {
                let which = if train.is_empty() { "training" } else { "validation" };
                for &f in &families {
                    report.families.insert(
                        f,
                        FamilyOutcome::Skipped {
                            reason: format!("empty {which} period"),
                        },
                    );
                }
                return Ok(report);
            }
            let zs: Vec<f64> = train.iter().map(|p| p.0).collect();
            let vz: Vec<f64> = valid.iter().map(|p| p.0).collect();
            let bins = build_bins(&zs, rc.options.bins, rc.options.min_bin)?;
            let overlap = overlap_of(&zs, &vz)?;
            for &f in &families {
                let outcome = fit_and_score(f, train, valid, &bins, overlap.interval(), &rc.options, &rc.fit, &eval_loss);
                report.families.insert(f, outcome);
            }
            report.overlap = Some(overlap);
            report.bins = Some(bins);
            Ok(report)
        })
        .collect::<Result<_>>()?;
    let summary = summarize(&splits, &families);
    Ok(RollingReport {
        task: task.to_string(),
        splits,
        summary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub kappa: f64,
    pub lambda: f64,
    pub splits_used: usize,
    pub id_pinball: Option<f64>,
    pub ood_pinball: Option<f64>,
    /// Mean `|τ̂_b − τ|` out of distribution.
    pub ood_calibration_error: Option<f64>,
    /// Signed global out-of-distribution coverage error.
    pub ood_coverage_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub task: String,
    /// Loss under which every cell's pinball metric is computed, so cells are comparable.
    pub eval_loss: LossConfig,
    pub cells: Vec<SweepCell>,
}

/// Rolling protocol of the sigmoid family over a κ × λ grid. Each cell fits
/// with its own κ and λ; pinball metrics use the base configuration's loss.
pub fn sensitivity_sweep(
    d: &Dataset,
    p: &PeriodPartition,
    task: &str,
    kappa_grid: &[f64],
    lambda_grid: &[f64],
    base: &RollingConfig,
) -> Result<SweepTable> {
    if kappa_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::Config("sweep grids must be nonempty".into()));
    }
    let eval_loss = base.eval_loss.unwrap_or(base.fit.loss);
    let grid: Vec<(f64, f64)> = kappa_grid
        .iter()
        .flat_map(|&k| lambda_grid.iter().map(move |&l| (k, l)))
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(kappa, lambda)| {
            let mut rc = base.clone();
            rc.families = vec![Family::Sigmoid];
            rc.fit.loss.kappa = kappa;
            rc.fit.lambda_ridge = lambda;
            rc.eval_loss = Some(eval_loss);
            let r = rolling_protocol(d, p, task, &rc)?;
            let s = r.summary.absolute.get(&Family::Sigmoid).cloned().unwrap_or_default();
            Ok(SweepCell {
                kappa,
                lambda,
                splits_used: s.splits_used,
                id_pinball: s.id_pinball,
                ood_pinball: s.ood_pinball,
                ood_calibration_error: s.ood_calibration_error,
                ood_coverage_error: s.ood_coverage_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        task: task.to_string(),
        eval_loss,
        cells,
    })
}

#[derive(Serialize)]
struct BinRow<'a> {
    task: &'a str,
    split: usize,
    train_period: &'a str,
    valid_period: &'a str,
    family: &'a str,
    scope: &'a str,
    bin: usize,
    z_lo: f64,
    z_hi: f64,
    n: usize,
    tau_hat: f64,
    deviation: f64,
}

/// One row per bin per split per family and scope.
pub fn write_bins_csv<'a, W: Write>(reports: impl IntoIterator<Item = &'a RollingReport>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        for s in &r.splits {
            let Some(bins) = &s.bins else { continue };
            for (f, o) in &s.families {
                for scope in [Scope::InDistribution, Scope::OutOfDistribution] {
                    let Some(rep) = o.report(scope) else { continue };
                    for b in &rep.coverage_by_bin {
                        w.serialize(BinRow {
                            task: &r.task,
                            split: s.split,
                            train_period: &s.train_period,
                            valid_period: &s.valid_period,
                            family: f.name(),
                            scope: scope.name(),
                            bin: b.bin,
                            z_lo: bins.edges()[b.bin],
                            z_hi: bins.edges()[b.bin + 1],
                            n: b.n,
                            tau_hat: b.tau_hat,
                            deviation: b.deviation,
                        })?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(table: &SweepTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in &table.cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

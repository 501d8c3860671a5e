use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use capbound::binning::build_bins;
use capbound::estimators::{fit_family, Family};
use capbound::evaluation::{
    evaluate, rolling_protocol, sensitivity_sweep, summarize, write_bins_csv, write_sweep_csv, FamilyOutcome,
    RollingConfig, RollingReport, Scope, SplitReport,
};
use capbound::records::{partition_periods, Dataset, PeriodPartition};
use chrono::NaiveDate;
use clap::Args;
use serde::Serialize;
use serde_json::json;

use super::fit::restrict_to_selection;
use crate::args::{date, DataArgs, FamilyArgs, FitArgs};
use crate::output::{csv_bytes, Run};

#[derive(Args, Debug)]
pub struct EvaluateCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub task: String,
    /// Comma-separated period cutoffs (YYYY-MM-DD); none means a single period.
    #[arg(long, value_delimiter = ',', value_parser = date)]
    pub cutoffs: Vec<NaiveDate>,
    /// Comma-separated estimator families.
    #[arg(long, value_delimiter = ',', default_values = ["constant", "binwise", "sigmoid", "ispline"])]
    pub families: Vec<Family>,
    #[command(flatten)]
    pub family_opts: FamilyArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Restrict every training period to the models of a `design` selection.
    #[arg(long)]
    pub select: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub task: String,
    #[arg(long, value_delimiter = ',', value_parser = date, required = true)]
    pub cutoffs: Vec<NaiveDate>,
    #[arg(long, value_delimiter = ',', default_values = ["20", "50", "100"])]
    pub kappas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values = ["0.0001", "0.001", "0.01"])]
    pub lambdas: Vec<f64>,
    #[command(flatten)]
    pub family_opts: FamilyArgs,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Serialize)]
struct MetricRow<'a> {
    split: usize,
    train_period: &'a str,
    valid_period: &'a str,
    family: &'a str,
    status: &'a str,
    scope: &'a str,
    n_points: Option<usize>,
    mean_pinball: Option<f64>,
    global_coverage: Option<f64>,
    global_coverage_error: Option<f64>,
    calibration_error: Option<f64>,
}

fn metric_rows(r: &RollingReport) -> Vec<MetricRow<'_>> {
    let mut rows = Vec::new();
    for s in &r.splits {
        for (f, outcome) in &s.families {
            for scope in [Scope::InDistribution, Scope::OutOfDistribution] {
                let rep = outcome.report(scope);
                rows.push(MetricRow {
                    split: s.split,
                    train_period: &s.train_period,
                    valid_period: &s.valid_period,
                    family: f.name(),
                    status: if matches!(outcome, FamilyOutcome::Fitted { .. }) { "fitted" } else { "skipped" },
                    scope: scope.name(),
                    n_points: rep.map(|r| r.n_points),
                    mean_pinball: rep.map(|r| r.mean_pinball),
                    global_coverage: rep.map(|r| r.global_coverage),
                    global_coverage_error: rep.map(|r| r.global_coverage_error),
                    calibration_error: rep.map(|r| r.calibration_error),
                });
            }
        }
    }
    rows
}

/// In-sample fits on one period; the report has no OOD entries.
fn single_period(d: &Dataset, label: &str, task: &str, rc: &RollingConfig) -> Result<RollingReport> {
    let points = d.task_points(task);
    let zs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let bins = build_bins(&zs, rc.options.bins, rc.options.min_bin.min(zs.len().max(1)))?;
    let mut families = BTreeMap::new();
    for &f in &rc.families {
        let outcome = if points.len() < f.min_points() {
            FamilyOutcome::Skipped {
                reason: format!("{} points, {f} needs {}", points.len(), f.min_points()),
            }
        } else {
            match fit_family(f, &points, &rc.options, &rc.fit)
                .and_then(|model| Ok((evaluate(&model, &points, &bins, &rc.fit.loss, Scope::InDistribution, None)?, model)))
            {
                Ok((id, model)) => FamilyOutcome::Fitted { model, id, ood: None },
                Err(e) => FamilyOutcome::Skipped { reason: e.to_string() },
            }
        };
        families.insert(f, outcome);
    }
    let split = SplitReport {
        split: 0,
        train_period: label.to_string(),
        valid_period: String::new(),
        n_train: points.len(),
        n_valid: 0,
        overlap: None,
        bins: Some(bins),
        families,
    };
    let summary = summarize(std::slice::from_ref(&split), &rc.families);
    Ok(RollingReport {
        task: task.to_string(),
        splits: vec![split],
        summary,
    })
}

fn rolling_config(families: &[Family], fa: &FamilyArgs, fit: &FitArgs) -> RollingConfig {
    let mut families = families.to_vec();
    families.sort();
    families.dedup();
    RollingConfig {
        families,
        options: fa.options(),
        fit: fit.config(),
        eval_loss: None,
    }
}

pub fn run_evaluate(cmd: &EvaluateCmd) -> Result<Run> {
    let full = cmd.data.load()?;
    full.require_task(&cmd.task)?;
    let rc = rolling_config(&cmd.families, &cmd.family_opts, &cmd.fit);
    let periods = PeriodPartition::new(cmd.cutoffs.clone())?;
    let parts = partition_periods(&full, &periods);
    let nonempty: Vec<usize> = (0..parts.len())
        .filter(|&t| !parts[t].data.task_points(&cmd.task).is_empty())
        .collect();

    let report = if nonempty.len() < 2 {
        let label = nonempty.first().map_or("P1".to_string(), |&t| parts[t].label.clone());
        let d = match &cmd.select {
            Some(p) => restrict_to_selection(&full, p)?,
            None => full.clone(),
        };
        single_period(&d, &label, &cmd.task, &rc)?
    } else {
        let d = match &cmd.select {
            Some(p) => {
                // selection applies to training data; the last period is only ever validated on
                let chosen = restrict_to_selection(&full, p)?;
                let last = periods.num_periods() - 1;
                full.filter(|r| periods.period_of(r.release_date) == last || chosen.get(&r.model_id).is_some())
            }
            None => full,
        };
        rolling_protocol(&d, &periods, &cmd.task, &rc)?
    };

    let mut bins_csv = Vec::new();
    write_bins_csv([&report], &mut bins_csv)?;
    let csv = csv_bytes(metric_rows(&report))?;
    let config = json!({
        "data": cmd.data,
        "task": cmd.task,
        "cutoffs": cmd.cutoffs,
        "rolling": rc,
        "select": cmd.select,
    });
    let mut run = Run::new("evaluate", config).input(&cmd.data.data);
    if let Some(p) = &cmd.select {
        run = run.input(p);
    }
    Ok(run.json("report.json", &report)?.raw("report.csv", csv).raw("bins.csv", bins_csv))
}

pub fn run_sweep(cmd: &SweepCmd) -> Result<Run> {
    let d = cmd.data.load()?;
    let rc = rolling_config(&[Family::Sigmoid], &cmd.family_opts, &cmd.fit);
    let periods = PeriodPartition::new(cmd.cutoffs.clone())?;
    let table = sensitivity_sweep(&d, &periods, &cmd.task, &cmd.kappas, &cmd.lambdas, &rc)?;
    let mut csv = Vec::new();
    write_sweep_csv(&table, &mut csv)?;
    let config = json!({
        "data": cmd.data,
        "task": cmd.task,
        "cutoffs": cmd.cutoffs,
        "kappas": cmd.kappas,
        "lambdas": cmd.lambdas,
        "rolling": rc,
    });
    Ok(Run::new("sweep", config).input(&cmd.data.data).json("report.json", &table)?.raw("report.csv", csv))
}

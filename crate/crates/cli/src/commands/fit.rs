use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{Context, Result};
use capbound::binning::{build_bins, BinPartition};
use capbound::design::DesignSelection;
use capbound::estimators::{fit_family, BoundaryModel, Family};
use capbound::evaluation::{evaluate, EvalReport, Scope};
use capbound::records::Dataset;
use clap::Args;
use serde::Serialize;
use serde_json::json;

use crate::args::{read_json, DataArgs, FamilyArgs, FitArgs};
use crate::output::{csv_bytes, Run};

#[derive(Args, Debug)]
pub struct FitCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub task: String,
    /// constant, binwise, sigmoid or ispline.
    #[arg(long, default_value = "sigmoid")]
    pub family: Family,
    #[command(flatten)]
    pub family_opts: FamilyArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Comma-separated z values at which to print the fitted boundary.
    #[arg(long, value_delimiter = ',')]
    pub predict_at: Vec<f64>,
    /// Fit only on the models named in a `design` selection.
    #[arg(long)]
    pub select: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictCmd {
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated z values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub at: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct ScoreCmd {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub task: String,
    #[arg(long, default_value_t = capbound::binning::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = capbound::binning::DEFAULT_MIN_BIN)]
    pub min_bin: usize,
}

#[derive(Serialize)]
struct Prediction {
    z: f64,
    q: Option<f64>,
}

#[derive(Serialize)]
struct FitReport<'a> {
    task: &'a str,
    family: Family,
    n_points: usize,
    /// Records lacking compute or a score for the task.
    n_incomplete: usize,
    selected_from: Option<usize>,
    model: &'a BoundaryModel,
    in_sample: Option<EvalReport>,
    predictions: Vec<Prediction>,
}

#[derive(Serialize)]
struct CoverageRow {
    scope: &'static str,
    bin: usize,
    z_lo: f64,
    z_hi: f64,
    n: usize,
    tau_hat: f64,
    deviation: f64,
}

fn coverage_rows(r: &EvalReport, bins: &BinPartition) -> Vec<CoverageRow> {
    let e = bins.edges();
    r.coverage_by_bin
        .iter()
        .map(|b| CoverageRow {
            scope: r.scope.name(),
            bin: b.bin,
            z_lo: e[b.bin],
            z_hi: e[b.bin + 1],
            n: b.n,
            tau_hat: b.tau_hat,
            deviation: b.deviation,
        })
        .collect()
}

/// In-sample bins; falls back to a single bin when the data are too few for `min_bin`.
fn sample_bins(points: &[(f64, f64)], bins: usize, min_bin: usize) -> Result<BinPartition> {
    let zs: Vec<f64> = points.iter().map(|p| p.0).collect();
    Ok(build_bins(&zs, bins, min_bin.min(zs.len().max(1)))?)
}

fn prediction_table(task: &str, model: &BoundaryModel, preds: &[Prediction]) -> String {
    let mut s = format!("{:<16} {:<10} {:>8} {:>10}\n", "task", "family", "z", "boundary");
    for p in preds {
        let q = p.q.map_or("n/a".to_string(), |q| format!("{q:.3}"));
        s.push_str(&format!("{:<16} {:<10} {:>8} {:>10}\n", task, model.family().name(), p.z, q));
    }
    s
}

pub fn restrict_to_selection(d: &Dataset, path: &std::path::Path) -> Result<Dataset> {
    let sel: DesignSelection = read_json(path)?;
    let ids: BTreeSet<&str> = sel.selected.iter().map(String::as_str).collect();
    let missing: Vec<&&str> = ids.iter().filter(|id| d.get(id).is_none()).collect();
    if !missing.is_empty() {
        anyhow::bail!("{} selected models are not in the data, e.g. `{}`", missing.len(), missing[0]);
    }
    Ok(d.filter(|r| ids.contains(r.model_id.as_str())))
}

pub fn run_fit(cmd: &FitCmd) -> Result<Run> {
    let full = cmd.data.load()?;
    full.require_task(&cmd.task)?;
    let d = match &cmd.select {
        Some(p) => restrict_to_selection(&full, p)?,
        None => full.clone(),
    };
    let cfg = cmd.fit.config();
    let opts = cmd.family_opts.options();
    let points = d.task_points(&cmd.task);
    let model = fit_family(cmd.family, &points, &opts, &cfg)?;
    let bins = sample_bins(&points, opts.bins, opts.min_bin)?;
    let in_sample = evaluate(&model, &points, &bins, &cfg.loss, Scope::InDistribution, None).ok();
    let predictions: Vec<Prediction> = cmd.predict_at.iter().map(|&z| Prediction { z, q: model.predict(z) }).collect();
    let stdout = (!predictions.is_empty()).then(|| prediction_table(&cmd.task, &model, &predictions));
    let csv = csv_bytes(in_sample.iter().flat_map(|r| coverage_rows(r, &bins)))?;
    let report = FitReport {
        task: &cmd.task,
        family: cmd.family,
        n_points: points.len(),
        n_incomplete: d.incomplete_for(&cmd.task).count(),
        selected_from: cmd.select.as_ref().map(|_| full.len()),
        model: &model,
        in_sample,
        predictions,
    };
    let config = json!({
        "data": cmd.data,
        "task": cmd.task,
        "family": cmd.family,
        "family_options": opts,
        "fit": cfg,
        "predict_at": cmd.predict_at,
        "select": cmd.select,
    });
    let mut run = Run::new("fit", config).input(&cmd.data.data);
    if let Some(p) = &cmd.select {
        run = run.input(p);
    }
    run.stdout = stdout;
    Ok(run.json("model.json", &model)?.json("report.json", &report)?.raw("report.csv", csv))
}

pub fn run_predict(cmd: &PredictCmd) -> Result<Run> {
    let model: BoundaryModel = read_json(&cmd.model).context("expected a model written by `fit`")?;
    let predictions: Vec<Prediction> = cmd.at.iter().map(|&z| Prediction { z, q: model.predict(z) }).collect();
    let mut run = Run::new("predict", json!({ "model": cmd.model, "at": cmd.at })).input(&cmd.model);
    run.stdout = Some(prediction_table("-", &model, &predictions));
    let csv = csv_bytes(&predictions)?;
    Ok(run.json("report.json", &predictions)?.raw("report.csv", csv))
}

pub fn run_score(cmd: &ScoreCmd) -> Result<Run> {
    let model: BoundaryModel = read_json(&cmd.model).context("expected a model written by `fit`")?;
    let d = cmd.data.load()?;
    d.require_task(&cmd.task)?;
    let points = d.task_points(&cmd.task);
    let bins = sample_bins(&points, cmd.bins, cmd.min_bin)?;
    let report = evaluate(&model, &points, &bins, &model.loss_config(), Scope::InDistribution, None)?;
    let csv = csv_bytes(coverage_rows(&report, &bins))?;
    let config = json!({
        "model": cmd.model,
        "data": cmd.data,
        "task": cmd.task,
        "bins": cmd.bins,
        "min_bin": cmd.min_bin,
    });
    let run = Run::new("score", config).input(&cmd.model).input(&cmd.data.data);
    Ok(run.json("report.json", &json!({ "task": cmd.task, "bins": bins, "report": report }))?.raw("report.csv", csv))
}

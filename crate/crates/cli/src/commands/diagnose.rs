use anyhow::{bail, Result};
use capbound::diagnostics::{
    contamination_shift_test, dominance_analysis, fit_size_time, pca_boundary, DominancePoint, LogBase, ShiftPair,
    SizeTimePoint, DEFAULT_SIZE_CUTOFF, REFERENCE_PARAMS,
};
use chrono::NaiveDate;
use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::args::{date, DataArgs, FitArgs};
use crate::output::{csv_bytes, Run};

#[derive(Subcommand, Debug)]
pub enum DiagnoseCmd {
    /// Boundary in log parameters with a time trend and a late-period shift.
    SizeTime(SizeTimeCmd),
    /// Large models scoring below the best earlier small model.
    Dominance(DominanceCmd),
    /// Logit regression of paired scores with a post-release indicator.
    Shift(ShiftCmd),
    /// Sigmoid boundaries on principal components of task scores.
    Pca(PcaCmd),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
pub enum LogBaseArg {
    Natural,
    Ten,
}

impl From<LogBaseArg> for LogBase {
    fn from(b: LogBaseArg) -> Self {
        match b {
            LogBaseArg::Natural => LogBase::Natural,
            LogBaseArg::Ten => LogBase::Ten,
        }
    }
}

#[derive(Args, Debug)]
pub struct SizeTimeCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub task: String,
    /// First day of the late period.
    #[arg(long, value_parser = date)]
    pub cutoff: NaiveDate,
    /// Parameter count at which the boundary is reported.
    #[arg(long, default_value_t = REFERENCE_PARAMS)]
    pub size_cutoff: f64,
    #[arg(long, value_enum, default_value_t = LogBaseArg::Natural)]
    pub log_base: LogBaseArg,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Args, Debug)]
pub struct DominanceCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub task: String,
    /// Models with more parameters than this count as large.
    #[arg(long, default_value_t = DEFAULT_SIZE_CUTOFF)]
    pub size_cutoff: f64,
}

#[derive(Args, Debug)]
pub struct ShiftCmd {
    #[command(flatten)]
    pub data: DataArgs,
    /// Older benchmark, the regressor.
    #[arg(long)]
    pub reference_task: String,
    /// Newer benchmark, the response.
    #[arg(long)]
    pub target_task: String,
    /// Models released on or after this date are post.
    #[arg(long, value_parser = date)]
    pub post_date: NaiveDate,
    /// Keep only reference scores in the range shared by both groups.
    #[arg(long)]
    pub restrict: bool,
}

#[derive(Args, Debug)]
pub struct PcaCmd {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated tasks; all tasks when omitted.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<String>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Serialize)]
struct DominanceRow<'a> {
    model_id: &'a str,
    param_count: f64,
    date: NaiveDate,
    y: f64,
    large: bool,
    small_best: Option<f64>,
    dominated: bool,
}

#[derive(Serialize)]
struct SizeTimeRow {
    period: &'static str,
    n: usize,
    size_effect: f64,
    q_reference: f64,
}

#[derive(Serialize)]
struct ShiftRow {
    n: usize,
    n_post: usize,
    gamma_hat: f64,
    gamma_se: f64,
    t_stat: f64,
    p_value: f64,
    ci_lo: f64,
    ci_hi: f64,
}

#[derive(Serialize)]
struct PcaRow<'a> {
    component: usize,
    task: &'a str,
    loading: f64,
    explained_variance_ratio: f64,
}

pub fn run_diagnose(cmd: &DiagnoseCmd) -> Result<Run> {
    match cmd {
        DiagnoseCmd::SizeTime(c) => size_time(c),
        DiagnoseCmd::Dominance(c) => dominance(c),
        DiagnoseCmd::Shift(c) => shift(c),
        DiagnoseCmd::Pca(c) => pca(c),
    }
}

fn size_time(c: &SizeTimeCmd) -> Result<Run> {
    let d = c.data.load()?;
    d.require_task(&c.task)?;
    let base = LogBase::from(c.log_base);
    let points: Vec<SizeTimePoint> = d
        .records()
        .iter()
        .filter_map(|r| {
            let n = r.param_count?;
            Some(SizeTimePoint {
                x: base.apply(n),
                t: r.release_date,
                y: r.score(&c.task)?,
            })
        })
        .collect();
    let cfg = c.fit.config();
    let fit = fit_size_time(&points, c.cutoff, base, c.size_cutoff, &cfg)?;
    let csv = csv_bytes([
        SizeTimeRow {
            period: "early",
            n: fit.n_early,
            size_effect: fit.size_effect_early,
            q_reference: fit.q_reference_early,
        },
        SizeTimeRow {
            period: "late",
            n: fit.n_late,
            size_effect: fit.size_effect_late,
            q_reference: fit.q_reference_late,
        },
    ])?;
    let config = json!({
        "data": c.data,
        "task": c.task,
        "cutoff": c.cutoff,
        "size_cutoff": c.size_cutoff,
        "log_base": base,
        "fit": cfg,
    });
    let report = json!({ "task": c.task, "fit": fit });
    Ok(Run::new("diagnose-size-time", config)
        .input(&c.data.data)
        .json("report.json", &report)?
        .raw("report.csv", csv))
}

fn dominance(c: &DominanceCmd) -> Result<Run> {
    let d = c.data.load()?;
    d.require_task(&c.task)?;
    let points: Vec<DominancePoint> = d
        .records()
        .iter()
        .filter_map(|r| {
            Some(DominancePoint {
                model_id: r.model_id.clone(),
                param_count: r.param_count?,
                date: r.release_date,
                y: r.score(&c.task)?,
            })
        })
        .collect();
    if points.is_empty() {
        bail!("no records with a parameter count and a `{}` score", c.task);
    }
    let report = dominance_analysis(&points, c.size_cutoff);
    let csv = csv_bytes(report.labels.iter().map(|l| DominanceRow {
        model_id: &l.model_id,
        param_count: l.param_count,
        date: l.date,
        y: l.y,
        large: l.large,
        small_best: l.small_best,
        dominated: l.dominated,
    }))?;
    let config = json!({ "data": c.data, "task": c.task, "size_cutoff": c.size_cutoff });
    Ok(Run::new("diagnose-dominance", config)
        .input(&c.data.data)
        .json("report.json", &json!({ "task": c.task, "dominance": report }))?
        .raw("report.csv", csv))
}

fn shift(c: &ShiftCmd) -> Result<Run> {
    let d = c.data.load()?;
    d.require_task(&c.reference_task)?;
    d.require_task(&c.target_task)?;
    // scores are stored as fractions; the test works in percent
    let pairs: Vec<ShiftPair> = d
        .records()
        .iter()
        .filter_map(|r| {
            Some(ShiftPair {
                m: 100.0 * r.score(&c.reference_task)?,
                y: 100.0 * r.score(&c.target_task)?,
                post: r.release_date >= c.post_date,
            })
        })
        .collect();
    let result = contamination_shift_test(&pairs, c.restrict)?;
    let csv = csv_bytes([ShiftRow {
        n: result.n,
        n_post: result.n_post,
        gamma_hat: result.gamma_hat,
        gamma_se: result.gamma_se,
        t_stat: result.t_stat,
        p_value: result.p_value,
        ci_lo: result.gamma_ci[0],
        ci_hi: result.gamma_ci[1],
    }])?;
    let config = json!({
        "data": c.data,
        "reference_task": c.reference_task,
        "target_task": c.target_task,
        "post_date": c.post_date,
        "restrict": c.restrict,
    });
    let report = json!({
        "reference_task": c.reference_task,
        "target_task": c.target_task,
        "post_date": c.post_date,
        "result": result,
    });
    Ok(Run::new("diagnose-shift", config)
        .input(&c.data.data)
        .json("report.json", &report)?
        .raw("report.csv", csv))
}

fn pca(c: &PcaCmd) -> Result<Run> {
    let d = c.data.load()?;
    let tasks = if c.tasks.is_empty() { d.task_names().to_vec() } else { c.tasks.clone() };
    let cfg = c.fit.config();
    let report = pca_boundary(&d, &tasks, c.k, &cfg)?;
    let csv = csv_bytes(report.components.iter().flat_map(|comp| {
        report.tasks.iter().zip(&comp.loadings).map(move |(t, &l)| PcaRow {
            component: comp.index,
            task: t,
            loading: l,
            explained_variance_ratio: comp.explained_variance_ratio,
        })
    }))?;
    let config = json!({ "data": c.data, "tasks": tasks, "k": c.k, "fit": cfg });
    Ok(Run::new("diagnose-pca", config)
        .input(&c.data.data)
        .json("report.json", &report)?
        .raw("report.csv", csv))
}

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use capbound::binning::build_bins;
use capbound::design::{
    budget_sweep, candidate_rows, greedy_select, make_candidates, pool_bins, DesignConfig, DesignSelection, StepKind,
    DEFAULT_EPSILON, DEFAULT_ETA, DEFAULT_POLISH,
};
use capbound::estimators::{fit_sigmoid, BoundaryModel, SigmoidParams};
use capbound::evaluation::{evaluate, Scope};
use capbound::records::{overlap_of, Format};
use chrono::NaiveDate;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{date, read_json, DataArgs, FitArgs};
use crate::output::{csv_bytes, Run};

#[derive(Args, Debug)]
pub struct DesignCmd {
    /// Candidate pool CSV with columns model_id, pretraining_flops, param_count.
    #[arg(long, conflicts_with = "data", required_unless_present = "data")]
    pub pool: Option<PathBuf>,
    /// Records file whose models form the pool.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub format: Option<Format>,
    #[arg(long, requires = "data")]
    pub include_pretrained: bool,
    /// Pool only the records released before this date; later records score the sweep.
    #[arg(long, value_parser = date, requires = "data")]
    pub before: Option<NaiveDate>,
    /// Task used to fit the nominal boundary when `--theta` is absent.
    #[arg(long, requires = "data")]
    pub task: Option<String>,
    /// Nominal sigmoid: a sigmoid model from `fit` or bare parameters {y0, l, a, beta}.
    #[arg(long, required_unless_present = "task")]
    pub theta: Option<PathBuf>,
    /// Budget as a percentage of the pool's total parameter count.
    #[arg(long, default_value_t = 20.0)]
    pub alpha: f64,
    /// Balance weight; chosen from the initial information gains when omitted.
    #[arg(long)]
    pub lambda_balance: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    /// Midpoint bins; 4 for pools under 200 candidates, 8 otherwise.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Maximum 1-exchange polishing moves.
    #[arg(long, default_value_t = DEFAULT_POLISH)]
    pub polish: usize,
    /// Also run a budget sweep over these percentages.
    #[arg(long, value_delimiter = ',', num_args = 0.., default_missing_value = "5,10,20,50,100")]
    pub sweep: Option<Vec<f64>>,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Deserialize)]
struct PoolRow {
    model_id: String,
    pretraining_flops: f64,
    param_count: f64,
}

#[derive(Serialize)]
struct TraceRow<'a> {
    step: usize,
    kind: &'static str,
    model_id: &'a str,
    removed: Option<&'a str>,
    delta_info: f64,
    delta_bal: f64,
    gain: f64,
}

fn read_pool(path: &std::path::Path) -> Result<Vec<(String, f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, r) in rdr.deserialize::<PoolRow>().enumerate() {
        let r = r.with_context(|| format!("pool row {}", i + 1))?;
        if !(r.pretraining_flops > 0.0) {
            bail!("pool row {}: pretraining_flops must be positive", i + 1);
        }
        rows.push((r.model_id, r.pretraining_flops.log10(), r.param_count));
    }
    Ok(rows)
}

fn read_theta(path: &std::path::Path) -> Result<SigmoidParams> {
    let value: serde_json::Value = read_json(path)?;
    if let Ok(m) = serde_json::from_value::<BoundaryModel>(value.clone()) {
        return m
            .as_sigmoid()
            .copied()
            .ok_or_else(|| anyhow::anyhow!("{} holds a {} model; design needs a sigmoid", path.display(), m.family()));
    }
    serde_json::from_value(value).with_context(|| format!("{} is neither a sigmoid model nor sigmoid parameters", path.display()))
}

fn trace_rows(sel: &DesignSelection) -> Vec<TraceRow<'_>> {
    sel.trace
        .iter()
        .map(|t| TraceRow {
            step: t.step,
            kind: match t.kind {
                StepKind::Anchor => "anchor",
                StepKind::Add => "add",
                StepKind::Swap => "swap",
            },
            model_id: &t.model_id,
            removed: t.removed.as_deref(),
            delta_info: t.delta_info,
            delta_bal: t.delta_bal,
            gain: t.gain,
        })
        .collect()
}

pub fn run_design(cmd: &DesignCmd) -> Result<Run> {
    let data_args = cmd.data.as_ref().map(|p| DataArgs {
        data: p.clone(),
        format: cmd.format,
        include_pretrained: cmd.include_pretrained,
        before: cmd.before,
    });
    let dataset = data_args.as_ref().map(DataArgs::load).transpose()?;
    if let (Some(d), Some(task)) = (&dataset, &cmd.task) {
        d.require_task(task)?;
    }
    let rows = match (&cmd.pool, &dataset) {
        (Some(p), _) => read_pool(p)?,
        (None, Some(d)) => candidate_rows(d),
        (None, None) => bail!("either --pool or --data is required"),
    };
    let fit_cfg = cmd.fit.config();
    let theta = match (&cmd.theta, &dataset, &cmd.task) {
        (Some(p), _, _) => read_theta(p)?,
        (None, Some(d), Some(task)) => *fit_sigmoid(&d.task_points(task), &fit_cfg)?
            .as_sigmoid()
            .expect("fit_sigmoid returns a sigmoid"),
        _ => bail!("--theta is required unless --data and --task are given"),
    };
    let zs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let bins = pool_bins(&zs, cmd.bins)?;
    let pool = make_candidates(&rows, &bins)?;
    let cfg = DesignConfig {
        alpha: cmd.alpha,
        lambda_balance: cmd.lambda_balance,
        epsilon_balance: cmd.epsilon,
        eta_ridge: cmd.eta,
        bin_weights: None,
        polish_exchanges: cmd.polish,
    };
    let selection = greedy_select(&pool, &theta, &cfg, &bins)?;

    let sweep = match &cmd.sweep {
        None => None,
        Some(alphas) => {
            // downstream OOD scoring needs the task and the records after --before
            let scorer = match (&data_args, &cmd.task, cmd.before) {
                (Some(a), Some(task), Some(_)) => {
                    let all = DataArgs { before: None, ..a.clone() }.load()?;
                    let train = dataset.as_ref().expect("loaded with data args");
                    let valid: Vec<(f64, f64)> = all
                        .filter(|r| cmd.before.is_some_and(|b| r.release_date >= b))
                        .task_points(task);
                    Some((train, task.as_str(), valid))
                }
                _ => None,
            };
            let rows = budget_sweep(&pool, &theta, &cfg, &bins, alphas, |sel| {
                let Some((train, task, valid)) = &scorer else {
                    return Ok((None, None));
                };
                let chosen = train.filter(|r| sel.selected.contains(&r.model_id));
                let pts = chosen.task_points(task);
                let model = fit_sigmoid(&pts, &fit_cfg)?;
                let zs: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let vz: Vec<f64> = valid.iter().map(|p| p.0).collect();
                let tz: Vec<f64> = train.task_points(task).iter().map(|p| p.0).collect();
                let tb = build_bins(&tz, capbound::binning::DEFAULT_BINS, capbound::binning::DEFAULT_MIN_BIN.min(tz.len()))?;
                let Some(iv) = overlap_of(&zs, &vz)?.interval() else {
                    return Ok((None, None));
                };
                let r = evaluate(&model, valid, &tb, &fit_cfg.loss, Scope::OutOfDistribution, Some(iv))?;
                Ok((Some(r.mean_pinball), Some(r.global_coverage_error)))
            })?;
            Some(rows)
        }
    };

    let trace_csv = csv_bytes(trace_rows(&selection))?;
    let report = json!({
        "pool_size": pool.len(),
        "pool_cost": pool.iter().map(|c| c.cost).sum::<f64>(),
        "bins": bins,
        "theta": theta,
        "selection": selection,
        "budget_sweep": sweep,
    });
    let config = json!({
        "pool": cmd.pool,
        "data": data_args,
        "task": cmd.task,
        "theta": cmd.theta,
        "design": cfg,
        "bins": bins.num_bins(),
        "sweep": cmd.sweep,
        "fit": fit_cfg,
    });
    let mut run = Run::new("design", config);
    for p in [&cmd.pool, &cmd.data, &cmd.theta].into_iter().flatten() {
        run = run.input(p);
    }
    let mut run = run
        .json("selection.json", &selection)?
        .json("report.json", &report)?
        .raw("report.csv", trace_csv);
    if let Some(rows) = &sweep {
        run = run.raw("budget.csv", csv_bytes(rows)?);
    }
    run.stdout = Some(format!(
        "selected {} of {} candidates, cost {:.4e} of budget {:.4e}\n",
        selection.selected.len(),
        pool.len(),
        selection.total_cost,
        selection.budget
    ));
    Ok(run)
}

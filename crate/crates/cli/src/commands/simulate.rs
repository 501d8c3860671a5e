use std::path::PathBuf;

use anyhow::Result;
use capbound::records::write_csv;
use capbound::synth::{generate, Drift, GeneratorSpec, QuantileSidecar};
use chrono::NaiveDate;
use clap::Args;
use serde::Serialize;
use serde_json::json;

use crate::args::{date, read_json};
use crate::output::{csv_bytes, Run};

#[derive(Args, Debug)]
pub struct SimulateCmd {
    /// Generator spec JSON; flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub task: Option<String>,
    /// Probability of a point above the boundary.
    #[arg(long)]
    pub exceed_prob: Option<f64>,
    #[arg(long, value_parser = date)]
    pub start_date: Option<NaiveDate>,
    #[arg(long, value_parser = date)]
    pub end_date: Option<NaiveDate>,
    /// Lift the boundary by `--drift-offset` for records from this date on.
    #[arg(long, value_parser = date, requires = "drift_offset")]
    pub drift_from: Option<NaiveDate>,
    #[arg(long, requires = "drift_from", allow_hyphen_values = true)]
    pub drift_offset: Option<f64>,
}

#[derive(Serialize)]
struct GridRow {
    z: f64,
    quantile: f64,
}

pub fn run_simulate(cmd: &SimulateCmd) -> Result<Run> {
    let mut spec: GeneratorSpec = match &cmd.spec {
        Some(p) => read_json(p)?,
        None => GeneratorSpec::default(),
    };
    if let Some(n) = cmd.n {
        spec.n = n;
    }
    if let Some(s) = cmd.seed {
        spec.seed = s;
    }
    if let Some(t) = &cmd.task {
        spec.task = t.clone();
    }
    if let Some(p) = cmd.exceed_prob {
        spec.exceed_prob = p;
    }
    if let Some(d) = cmd.start_date {
        spec.start_date = d;
    }
    if let Some(d) = cmd.end_date {
        spec.end_date = d;
    }
    if let (Some(from), Some(offset)) = (cmd.drift_from, cmd.drift_offset) {
        spec.drift = Some(Drift { from, offset });
    }
    let data = generate(&spec)?;
    let sidecar = QuantileSidecar::from_spec(&spec);
    let mut records = Vec::new();
    write_csv(&data, &mut records)?;
    let grid = csv_bytes(sidecar.grid.iter().map(|&[z, quantile]| GridRow { z, quantile }))?;
    let report = json!({
        "n_records": data.len(),
        "task": spec.task,
        "quantile_level": spec.quantile_level(),
        "spec": spec,
    });
    let mut run = Run::new("simulate", json!({ "spec": spec, "spec_file": cmd.spec }));
    if let Some(p) = &cmd.spec {
        run = run.input(p);
    }
    Ok(run
        .raw("records.csv", records)
        .json("quantile.json", &sidecar)?
        .json("report.json", &report)?
        .raw("report.csv", grid))
}

//! `capbound`: capability-boundary estimation from the command line.

mod args;
mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::design::DesignCmd;
use commands::diagnose::DiagnoseCmd;
use commands::evaluate::{EvaluateCmd, SweepCmd};
use commands::fit::{FitCmd, PredictCmd, ScoreCmd};
use commands::simulate::SimulateCmd;
use output::{write_run, Destination};

#[derive(Parser, Debug)]
#[command(name = "capbound", version, about = "High-quantile capability boundaries of benchmark scores versus compute")]
struct Cli {
    /// Write outputs to exactly this directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root under which `<command>/<timestamp>-<digest>/` run directories are created.
    #[arg(long, global = true, env = "CAPBOUND_OUT")]
    out_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a boundary to one task.
    Fit(FitCmd),
    /// Evaluate a saved boundary at given compute levels.
    Predict(PredictCmd),
    /// In-sample metrics of a saved boundary on a dataset.
    Score(ScoreCmd),
    /// Rolling chronological evaluation of estimator families.
    Evaluate(EvaluateCmd),
    /// Sigmoid sensitivity over smoothing and ridge grids.
    Sweep(SweepCmd),
    /// Choose which models to evaluate under a budget.
    Design(DesignCmd),
    /// Case-study diagnostics.
    #[command(subcommand)]
    Diagnose(DiagnoseCmd),
    /// Generate synthetic records with a known boundary.
    Simulate(SimulateCmd),
}

fn is_numerical(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<capbound::Error>().is_some_and(capbound::Error::is_numerical))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let started = chrono::Utc::now();
    let run = match &cli.command {
        Command::Fit(c) => commands::fit::run_fit(c),
        Command::Predict(c) => commands::fit::run_predict(c),
        Command::Score(c) => commands::fit::run_score(c),
        Command::Evaluate(c) => commands::evaluate::run_evaluate(c),
        Command::Sweep(c) => commands::evaluate::run_sweep(c),
        Command::Design(c) => commands::design::run_design(c),
        Command::Diagnose(c) => commands::diagnose::run_diagnose(c),
        Command::Simulate(c) => commands::simulate::run_simulate(c),
    };
    let dest = Destination {
        out: cli.out,
        root: cli.out_root,
    };
    match run.and_then(|r| write_run(r, &dest, started)) {
        Ok(dir) => {
            eprintln!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_numerical(&e) { 2 } else { 1 })
        }
    }
}

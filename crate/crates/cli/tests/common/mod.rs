//! Helpers for driving the `capbound` binary from tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_capbound");

pub fn sample_csv() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/sample_records.csv")
}

pub fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas")
}

/// Runs the binary with `CAPBOUND_OUT` pointed inside `cwd`.
pub fn capbound(cwd: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env("CAPBOUND_OUT", cwd.join("runs"))
        .output()
        .expect("spawn capbound")
}

/// Runs and asserts success, echoing stderr on failure.
pub fn ok(cwd: &Path, args: &[&str]) -> Output {
    let out = capbound(cwd, args);
    assert!(
        out.status.success(),
        "capbound {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

/// Writes a records CSV with one task column.
pub fn write_records(path: &Path, task: &str, rows: &[(&str, f64, f64, &str, f64)]) {
    let mut s = format!(
        "model_id,base_model_id,pretraining_flops,param_count,release_date,flag_official,flag_pretrained,{task}\n"
    );
    for (id, flops, params, date, y) in rows {
        s.push_str(&format!("{id},{id}-base,{flops:e},{params:e},{date},true,false,{y}\n"));
    }
    std::fs::write(path, s).unwrap();
}

/// The synthetic-pipeline commands every determinism check exercises, with
/// `{sim}` and `{fit}` standing for earlier run directories.
pub fn pipeline_commands(sample: &str) -> Vec<(&'static str, Vec<String>)> {
    let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    vec![
        ("sim", v(&["simulate", "--n", "600", "--seed", "5"])),
        ("fit", v(&["fit", "--data", "{sim}/records.csv", "--task", "synthetic", "--before", "2024-01-01", "--predict-at", "22,24"])),
        ("predict", v(&["predict", "--model", "{fit}/model.json", "--at", "21,23,25"])),
        ("score", v(&["score", "--model", "{fit}/model.json", "--data", "{sim}/records.csv", "--task", "synthetic"])),
        ("evaluate", v(&["evaluate", "--data", "{sim}/records.csv", "--task", "synthetic", "--cutoffs", "2024-01-01"])),
        ("sweep", v(&["sweep", "--data", "{sim}/records.csv", "--task", "synthetic", "--cutoffs", "2024-01-01", "--kappas", "20,50", "--lambdas", "0.001"])),
        ("design", v(&["design", "--data", "{sim}/records.csv", "--before", "2024-01-01", "--theta", "{fit}/model.json", "--task", "synthetic", "--alpha", "20", "--sweep", "10,50,100"])),
        ("size-time", v(&["diagnose", "size-time", "--data", sample, "--task", "bbh", "--cutoff", "2024-06-01"])),
        ("dominance", v(&["diagnose", "dominance", "--data", sample, "--task", "bbh"])),
        ("shift", v(&["diagnose", "shift", "--data", sample, "--reference-task", "bbh", "--target-task", "mmlu_pro", "--post-date", "2024-06-01"])),
        ("pca", v(&["diagnose", "pca", "--data", sample])),
    ]
}

/// Runs [`pipeline_commands`] into `<base>/<name>` and returns the directories.
pub fn run_pipeline(cwd: &Path, base: &Path) -> Vec<(&'static str, PathBuf)> {
    let sample = sample_csv().display().to_string();
    let sim = base.join("sim").display().to_string();
    let fit = base.join("fit").display().to_string();
    let mut dirs = Vec::new();
    for (name, args) in pipeline_commands(&sample) {
        let dir = base.join(name);
        let mut full: Vec<String> = args.iter().map(|a| a.replace("{sim}", &sim).replace("{fit}", &fit)).collect();
        full.push("--out".into());
        full.push(dir.display().to_string());
        let refs: Vec<&str> = full.iter().map(String::as_str).collect();
        ok(cwd, &refs);
        dirs.push((name, dir));
    }
    dirs
}

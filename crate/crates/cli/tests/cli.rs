mod common;

use std::collections::BTreeMap;

use common::*;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn sha(path: &std::path::Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

#[test]
fn constant_fit_on_one_point_sits_at_that_point() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("one.csv");
    write_records(&data, "t", &[("m0", 1e22, 1e9, "2024-01-01", 0.37)]);
    ok(tmp.path(), &["fit", "--data", "one.csv", "--task", "t", "--family", "constant", "--out", "fit"]);
    let model = read_json(&tmp.path().join("fit/model.json"));
    assert_eq!(model["family"], "constant");
    let level = model["params"]["level"].as_f64().unwrap();
    // one point: the smoothed loss is stationary where sigmoid(κ(y − c)) = 1 − τ
    let (tau, kappa) = (0.98_f64, 50.0_f64);
    let want = 0.37 - ((1.0 - tau) / tau).ln() / kappa;
    assert!((level - want).abs() < 1e-6, "level {level}, want {want}");
}

#[test]
fn same_seed_gives_identical_fit_outputs() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["simulate", "--n", "400", "--seed", "2", "--out", "sim"]);
    for out in ["a", "b"] {
        ok(tmp.path(), &["fit", "--data", "sim/records.csv", "--task", "synthetic", "--seed", "7", "--out", out]);
    }
    for f in ["model.json", "report.json", "report.csv"] {
        assert_eq!(
            std::fs::read(tmp.path().join("a").join(f)).unwrap(),
            std::fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn full_budget_design_covers_the_pool() {
    let tmp = TempDir::new().unwrap();
    let mut pool = String::from("model_id,pretraining_flops,param_count\n");
    for i in 0..40 {
        let z = 20.0 + 6.0 * i as f64 / 39.0;
        pool.push_str(&format!("m{i},{:e},{:e}\n", 10f64.powf(z), 1e9 * (1.0 + (i % 7) as f64)));
    }
    std::fs::write(tmp.path().join("pool.csv"), pool).unwrap();
    std::fs::write(tmp.path().join("theta.json"), r#"{"y0": 0.1, "L": 0.7, "a": -34.5, "beta": 1.5}"#).unwrap();
    ok(tmp.path(), &["design", "--pool", "pool.csv", "--theta", "theta.json", "--alpha", "100", "--out", "d"]);
    let sel = read_json(&tmp.path().join("d/selection.json"));
    assert_eq!(sel["selected"].as_array().unwrap().len(), 40);
    let trace = std::fs::read_to_string(tmp.path().join("d/report.csv")).unwrap();
    assert!(trace.starts_with("step,kind,model_id,removed,delta_info,delta_bal,gain"));
}

#[test]
fn single_period_evaluation_has_no_ood_metrics() {
    let tmp = TempDir::new().unwrap();
    let sample = sample_csv().display().to_string();
    ok(tmp.path(), &["evaluate", "--data", &sample, "--task", "ifeval", "--out", "e"]);
    let r = read_json(&tmp.path().join("e/report.json"));
    let splits = r["splits"].as_array().unwrap();
    assert_eq!(splits.len(), 1);
    for (_, outcome) in splits[0]["families"].as_object().unwrap() {
        if outcome["status"] == "fitted" {
            assert!(outcome["ood"].is_null());
            assert!(outcome["id"]["mean_pinball"].as_f64().unwrap() >= 0.0);
        }
    }
    for (_, s) in r["summary"]["absolute"].as_object().unwrap() {
        assert!(s["ood_pinball"].is_null());
    }
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = TempDir::new().unwrap();
    let sample = sample_csv().display().to_string();
    assert_eq!(capbound(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(capbound(tmp.path(), &["fit", "--bogus"]).status.code(), Some(1));
    let missing = capbound(tmp.path(), &["fit", "--data", &sample, "--task", "nope"]);
    assert_eq!(missing.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&missing.stderr);
    assert!(msg.contains("available tasks") && msg.contains("ifeval"), "{msg}");
    assert_eq!(
        capbound(tmp.path(), &["fit", "--data", "absent.csv", "--task", "t"]).status.code(),
        Some(1)
    );

    // identical reference scores make the shift regression collinear
    let rows: Vec<String> = (0..12)
        .map(|i| {
            let date = if i % 2 == 0 { "2023-05-01" } else { "2024-09-01" };
            format!("m{i},b{i},1e22,1e9,{date},true,false,0.5,{}\n", 0.3 + 0.02 * i as f64)
        })
        .collect();
    let csv = format!(
        "model_id,base_model_id,pretraining_flops,param_count,release_date,flag_official,flag_pretrained,old,new\n{}",
        rows.concat()
    );
    std::fs::write(tmp.path().join("pairs.csv"), csv).unwrap();
    let out = capbound(
        tmp.path(),
        &["diagnose", "shift", "--data", "pairs.csv", "--reference-task", "old", "--target-task", "new", "--post-date", "2024-01-01"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diagnostics:"));
}

#[test]
fn default_layout_and_manifest_digests() {
    let tmp = TempDir::new().unwrap();
    let sample = sample_csv();
    let before = sha(&sample);
    ok(tmp.path(), &["diagnose", "dominance", "--data", &sample.display().to_string(), "--task", "bbh"]);
    assert_eq!(sha(&sample), before, "input was modified");

    let cmd_dir = tmp.path().join("runs/diagnose-dominance");
    let runs: Vec<_> = std::fs::read_dir(&cmd_dir).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1);
    let name = runs[0].file_name().unwrap().to_string_lossy().to_string();
    let (stamp, digest) = name.split_once('-').unwrap();
    assert_eq!(stamp.len(), 16);
    assert!(stamp.ends_with('Z'));
    assert_eq!(digest.len(), 12);

    let m = read_json(&runs[0].join("manifest.json"));
    assert!(m["run_digest"].as_str().unwrap().starts_with(digest));
    assert_eq!(m["inputs"][0]["sha256"], before);
    let outputs: BTreeMap<String, String> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["path"].as_str().unwrap().to_string(), o["sha256"].as_str().unwrap().to_string()))
        .collect();
    assert!(outputs.contains_key("report.json") && outputs.contains_key("report.csv"));
    for (file, hash) in outputs {
        assert_eq!(sha(&runs[0].join(&file)), hash, "{file}");
    }
    assert_eq!(m["config"]["size_cutoff"], 13e9);
}

#[test]
fn reports_match_shipped_schemas() {
    let tmp = TempDir::new().unwrap();
    let dirs = run_pipeline(tmp.path(), &tmp.path().join("p"));
    let schema_for = |name: &str| match name {
        "sim" => "simulate",
        "fit" => "fit",
        "size-time" => "diagnose-size-time",
        "dominance" => "diagnose-dominance",
        "shift" => "diagnose-shift",
        "pca" => "diagnose-pca",
        other => other,
    }
    .to_string();
    let check = |schema: &str, doc: &std::path::Path| {
        let s = read_json(&schema_dir().join(format!("{schema}.schema.json")));
        let v = jsonschema::validator_for(&s).unwrap();
        let instance = read_json(doc);
        let errors: Vec<String> = v.iter_errors(&instance).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{} vs {schema}: {errors:?}", doc.display());
    };
    for (name, dir) in &dirs {
        check(&schema_for(name), &dir.join("report.json"));
        check("manifest", &dir.join("manifest.json"));
    }
    let dir = |n: &str| dirs.iter().find(|d| d.0 == n).unwrap().1.clone();
    check("model", &dir("fit").join("model.json"));
    check("selection", &dir("design").join("selection.json"));
}

/// simulate → fit on the early period → design at α = 20 → evaluate with the
/// selection: OOD pinball stays within 10% of the full-data value.
#[test]
fn budgeted_pipeline_tracks_full_data() {
    let tmp = TempDir::new().unwrap();
    let p = tmp.path();
    ok(p, &["simulate", "--n", "1200", "--seed", "3", "--out", "sim"]);
    ok(p, &["fit", "--data", "sim/records.csv", "--task", "synthetic", "--before", "2024-01-01", "--out", "theta"]);
    ok(p, &["design", "--data", "sim/records.csv", "--before", "2024-01-01", "--theta", "theta/model.json", "--alpha", "20", "--out", "design"]);
    ok(p, &["fit", "--data", "sim/records.csv", "--task", "synthetic", "--select", "design/selection.json", "--out", "sel"]);
    let base = ["evaluate", "--data", "sim/records.csv", "--task", "synthetic", "--cutoffs", "2024-01-01", "--families", "sigmoid"];
    ok(p, &[&base[..], &["--out", "full"]].concat());
    ok(p, &[&base[..], &["--select", "design/selection.json", "--out", "budget"]].concat());
    let ood = |d: &str| read_json(&p.join(d).join("report.json"))["summary"]["absolute"]["sigmoid"]["ood_pinball"].as_f64().unwrap();
    let (full, budget) = (ood("full"), ood("budget"));
    assert!((budget - full).abs() <= 0.10 * full, "budget {budget} vs full {full}");
    let fitted = read_json(&p.join("sel/report.json"));
    let chosen = read_json(&p.join("design/selection.json"))["selected"].as_array().unwrap().len();
    assert_eq!(fitted["n_points"].as_u64().unwrap() as usize, chosen);
}

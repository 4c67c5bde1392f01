use std::fs;

use needlet_sobolev::cli::{run, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use serde_json::Value;

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["needlet"];
    full.extend_from_slice(args);
    let code = run(full, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn json(args: &[&str]) -> Value {
    let (code, out, err) = call(args);
    assert_eq!(code, EXIT_OK, "{err}");
    serde_json::from_str(&out).unwrap()
}

const ZONAL2: &str = r#"{"kind":"zonal","degree":2,"alpha":0.1}"#;

#[test]
fn frame_check_passes_at_dyadic_defaults() {
    let report = json(&["frame-check", "--b", "2", "--j-max", "4"]);
    assert_eq!(report["passed"], Value::Bool(true));
    let levels = report["frame"]["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 5);
    assert_eq!(levels[2]["band"], serde_json::json!([2, 8]));
    assert!(levels[2]["nodes"].as_u64().unwrap() > 0);
    assert_eq!(report["diagnostics"].as_array().unwrap().len(), 4);
}

#[test]
fn frame_check_rejects_unit_ratio() {
    assert_eq!(call(&["frame-check", "--b", "1"]).0, EXIT_USAGE);
    assert_eq!(call(&["frame-check", "--b", "-3"]).0, EXIT_USAGE);
}

#[test]
fn frame_check_over_degree_cap_is_usage_error() {
    assert_eq!(
        call(&["frame-check", "--b", "3", "--j-max", "6"]).0,
        EXIT_USAGE
    );
}

#[test]
fn estimate_reports_truth_and_error() {
    let v = json(&[
        "estimate",
        "--density",
        ZONAL2,
        "--r",
        "1",
        "--j",
        "3",
        "--n",
        "2000",
        "--seed",
        "11",
    ]);
    let truth = v["truth"].as_f64().unwrap();
    assert!((truth - 0.023873).abs() < 1e-6);
    let value = v["value"].as_f64().unwrap();
    assert!((v["error"].as_f64().unwrap() - (value - truth)).abs() < 1e-15);

    let u = json(&[
        "estimate", "--r", "1", "--j", "2", "--n", "500", "--seed", "1",
    ]);
    assert_eq!(u["truth"].as_f64().unwrap(), 0.0);
}

#[test]
fn estimate_requires_seed_and_valid_density() {
    assert_eq!(call(&["estimate", "--n", "100", "--j", "1"]).0, EXIT_USAGE);
    let bad = r#"{"kind":"zonal","degree":2,"alpha":0.1,"colour":1}"#;
    assert_eq!(
        call(&["estimate", "--density", bad, "--n", "100", "--seed", "1"]).0,
        EXIT_USAGE
    );
    let negative = r#"{"kind":"zonal","degree":2,"alpha":5.0}"#;
    assert_eq!(
        call(&[
            "estimate",
            "--density",
            negative,
            "--n",
            "100",
            "--seed",
            "1"
        ])
        .0,
        EXIT_USAGE
    );
    assert_eq!(
        call(&["estimate", "--n", "100", "--seed", "1", "--r", "-1"]).0,
        EXIT_USAGE
    );
}

#[test]
fn estimate_is_reproducible() {
    let args = [
        "estimate",
        "--density",
        ZONAL2,
        "--n",
        "1500",
        "--j",
        "2",
        "--seed",
        "9",
    ];
    assert_eq!(call(&args).1, call(&args).1);
    let other = [
        "estimate",
        "--density",
        ZONAL2,
        "--n",
        "1500",
        "--j",
        "2",
        "--seed",
        "10",
    ];
    assert_ne!(call(&args).1, call(&other).1);
}

#[test]
fn lepski_single_level_grid() {
    let v = json(&[
        "lepski",
        "--density",
        ZONAL2,
        "--n",
        "1000",
        "--seed",
        "3",
        "--j-min",
        "2",
        "--j-max",
        "2",
    ]);
    assert_eq!(v["J_hat"].as_u64().unwrap(), 2);
}

#[test]
fn lepski_thresholds_increase_and_echo_c0() {
    let v = json(&[
        "lepski",
        "--density",
        ZONAL2,
        "--n",
        "2000",
        "--seed",
        "3",
        "--c0",
        "0.5",
    ]);
    assert_eq!(v["C0"].as_f64().unwrap(), 0.5);
    let t: Vec<f64> = v["thresholds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!(t.len() >= 2);
    assert!(t.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(v["per_level_estimates"].as_array().unwrap().len(), t.len());

    let cal = json(&[
        "lepski",
        "--density",
        ZONAL2,
        "--n",
        "2000",
        "--seed",
        "3",
        "--calibration-replicates",
        "50",
    ]);
    assert!(cal["C0"].as_f64().unwrap() > 0.0);
    assert_eq!(cal["C0_policy"]["policy"], "calibrated");
}

#[test]
fn lepski_usage_errors() {
    assert_eq!(
        call(&["lepski", "--n", "1000", "--seed", "1", "--c0", "-1"]).0,
        EXIT_USAGE
    );
    assert_eq!(
        call(&[
            "lepski",
            "--n",
            "1000",
            "--seed",
            "1",
            "--calibration-replicates",
            "5"
        ])
        .0,
        EXIT_USAGE
    );
    assert_eq!(call(&["lepski", "--n", "1000"]).0, EXIT_USAGE);
}

#[test]
fn oracle_table_csv() {
    let (code, out, _) = call(&["oracle-table"]);
    assert_eq!(code, EXIT_OK);
    let mut lines = out.lines();
    assert_eq!(
        lines.next().unwrap(),
        "s,n,J_star,J_hat,oracle_risk,adaptive_risk,d,r,B,c_bias,c_var"
    );
    assert_eq!(lines.count(), 12);

    let (code, out, _) = call(&["oracle-table", "--rows", "2.2:1000,3.0:20000"]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out.lines().count(), 3);
}

#[test]
fn oracle_table_rejects_s_at_most_r() {
    assert_eq!(call(&["oracle-table", "--rows", "1.0:1000"]).0, EXIT_USAGE);
    assert_eq!(
        call(&["oracle-table", "--rows", "0.5:1000", "--r", "1"]).0,
        EXIT_USAGE
    );
    assert_eq!(call(&["oracle-table", "--rows", "nonsense"]).0, EXIT_USAGE);
}

#[test]
fn output_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    let (code, out, _) = call(&["--output", path.to_str().unwrap(), "oracle-table"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.is_empty());
    assert!(fs::read_to_string(&path).unwrap().starts_with("s,n,"));
}

#[test]
fn output_to_missing_directory_is_runtime_error() {
    let (code, _, err) = call(&["--output", "/nonexistent-dir/x/table.csv", "oracle-table"]);
    assert_eq!(code, EXIT_FAILURE, "{err}");
}

#[test]
fn config_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"seed": 4, "n": 800, "j": 2, "density": {"kind": "zonal", "degree": 2, "alpha": 0.1}}"#,
    )
    .unwrap();
    let from_file = json(&["--config", cfg.to_str().unwrap(), "estimate"]);
    assert_eq!(from_file["n"].as_u64().unwrap(), 800);
    assert_eq!(from_file["seed"].as_u64().unwrap(), 4);
    let overridden = json(&["--config", cfg.to_str().unwrap(), "estimate", "--n", "900"]);
    assert_eq!(overridden["n"].as_u64().unwrap(), 900);
}

#[test]
fn config_rejects_unknown_keys_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 4, "sample_count": 10}"#).unwrap();
    let (code, _, err) = call(&["--config", cfg.to_str().unwrap(), "oracle-table"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("sample_count"), "{err}");
}

#[test]
fn experiment_missing_spec() {
    assert_eq!(
        call(&["experiment", "/definitely/not/here.json"]).0,
        EXIT_USAGE
    );
}

#[test]
fn experiment_invalid_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"density": {"kind": "uniform"}, "r": 0, "sample_sizes": [], "replicates": 2, "seed": 1}"#)
        .unwrap();
    assert_eq!(call(&["experiment", spec.to_str().unwrap()]).0, EXIT_USAGE);
}

#[test]
fn experiment_smoke_lists_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{
            "density": {"kind": "zonal", "degree": 2, "alpha": 0.1},
            "r": 0,
            "sample_sizes": [200, 400],
            "replicates": 2,
            "seed": 5,
            "c0": {"policy": "fixed", "value": 1.0}
        }"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let start = std::time::Instant::now();
    let (code, out, err) = call(&[
        "--output",
        out_dir.to_str().unwrap(),
        "experiment",
        spec.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(start.elapsed().as_secs() < 60);
    let listed: Vec<&str> = out.lines().collect();
    assert_eq!(listed.len(), 2);
    for p in listed {
        assert!(fs::metadata(p).unwrap().len() > 0);
    }
}

#[test]
fn zero_threads_and_unknown_command() {
    assert_eq!(call(&["--threads", "0", "oracle-table"]).0, EXIT_USAGE);
    assert_eq!(call(&["plot"]).0, EXIT_USAGE);
}

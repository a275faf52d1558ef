//! End-to-end checks of the command-line front end: exit codes, emitted
//! files, determinism across processes, and the environment seed override.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn almreg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_almreg"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn quadratic_config(dir: &Path, out_name: &str) -> String {
    let out_dir = dir.join(out_name);
    write_config(
        dir,
        &format!("{out_name}.json"),
        &format!(
            r#"{{
  "problem": {{"kind": "quadratic", "dims": [6, 9], "seed": 3}},
  "solver": {{"tau": 4.0}},
  "stopping": {{"delta0": 0.2, "count": 4}},
  "output": {{"dir": "{}", "format": "both"}}
}}"#,
            out_dir.to_str().unwrap()
        ),
    )
}

#[test]
fn sweep_writes_reports_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quadratic_config(dir.path(), "out");
    let out = almreg().args(["sweep", "--config", &cfg]).output().unwrap();
    assert_exit(&out, 0);
    let sweep_json = dir.path().join("out/sweep.json");
    assert!(sweep_json.exists());
    assert!(dir.path().join("out/sweep.csv").exists());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&sweep_json).unwrap()).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 4);
    assert_eq!(v["certified"], serde_json::Value::Bool(true));
}

#[test]
fn sweep_is_deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_a = quadratic_config(dir.path(), "a");
    let cfg_b = quadratic_config(dir.path(), "b");
    assert_exit(&almreg().args(["sweep", "--config", &cfg_a]).output().unwrap(), 0);
    assert_exit(&almreg().args(["sweep", "--config", &cfg_b]).output().unwrap(), 0);
    let a = fs::read(dir.path().join("a/sweep.json")).unwrap();
    let b = fs::read(dir.path().join("b/sweep.json")).unwrap();
    assert_eq!(a, b, "same config must produce byte-identical reports");
}

#[test]
fn report_rerenders_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quadratic_config(dir.path(), "out");
    assert_exit(&almreg().args(["sweep", "--config", &cfg]).output().unwrap(), 0);
    let input = dir.path().join("out/sweep.json");
    let rerender = dir.path().join("rerendered");
    let out = almreg()
        .args(["report", "--input", input.to_str().unwrap(), "--dir", rerender.to_str().unwrap()])
        .output()
        .unwrap();
    assert_exit(&out, 0);
    let original = fs::read(dir.path().join("out/sweep.csv")).unwrap();
    let again = fs::read(rerender.join("sweep.csv")).unwrap();
    assert_eq!(original, again);
}

#[test]
fn run_with_delta_override_runs_one_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quadratic_config(dir.path(), "out");
    let out = almreg().args(["run", "--config", &cfg, "--delta", "0.07"]).output().unwrap();
    assert_exit(&out, 0);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/sweep.json")).unwrap())
            .unwrap();
    let runs = v["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 1);
    assert!((runs[0]["delta"].as_f64().unwrap() - 0.07).abs() < 1e-15);
}

#[test]
fn fixed_rule_runs_noisefree_mode() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("nf");
    let cfg = write_config(
        dir.path(),
        "nf.json",
        &format!(
            r#"{{
  "problem": {{"kind": "sparse", "dims": [10, 24], "support_size": 2, "seed": 4}},
  "solver": {{"tau": 1.0}},
  "stopping": {{"rule": "fixed", "delta0": 0.0, "count": 12}},
  "output": {{"dir": "{}", "format": "both"}}
}}"#,
            out_dir.to_str().unwrap()
        ),
    );
    let out = almreg().args(["run", "--config", &cfg]).output().unwrap();
    assert_exit(&out, 0);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(v["steps"], serde_json::json!(12));
    assert!(out_dir.join("rate-noisefree_l1.csv").exists());
}

#[test]
fn unstopped_morozov_run_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("cap");
    let cfg = write_config(
        dir.path(),
        "cap.json",
        &format!(
            r#"{{
  "problem": {{"kind": "quadratic", "dims": [6, 9], "seed": 3}},
  "solver": {{"tau": 1.0, "max_outer": 2}},
  "stopping": {{"delta0": 0.001, "count": 1}},
  "output": {{"dir": "{}", "format": "json"}}
}}"#,
            out_dir.to_str().unwrap()
        ),
    );
    let out = almreg().args(["run", "--config", &cfg]).output().unwrap();
    assert_exit(&out, 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("VIOLATION"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // Malformed JSON.
    let bad_json = write_config(dir.path(), "bad.json", "{not json");
    assert_exit(&almreg().args(["sweep", "--config", &bad_json]).output().unwrap(), 2);
    // Unknown problem kind.
    let bad_kind = write_config(
        dir.path(),
        "kind.json",
        r#"{"problem": {"kind": "mystery", "dims": [3, 3], "seed": 1},
            "solver": {"tau": 1.0},
            "stopping": {"delta0": 0.1},
            "output": {"dir": "o"}}"#,
    );
    assert_exit(&almreg().args(["sweep", "--config", &bad_kind]).output().unwrap(), 2);
    // Missing file.
    let missing = dir.path().join("nope.json");
    assert_exit(
        &almreg().args(["sweep", "--config", missing.to_str().unwrap()]).output().unwrap(),
        2,
    );
    // Unknown subcommand is an argument error.
    assert_exit(&almreg().args(["frobnicate"]).output().unwrap(), 2);
}

#[test]
fn certify_prints_summary_and_seed_override_applies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cert.json",
        r#"{"problem": {"kind": "sparse", "dims": [10, 24], "support_size": 2, "seed": 4},
            "solver": {"tau": 1.0},
            "stopping": {"delta0": 0.1},
            "output": {"dir": "o"}}"#,
    );
    let out = almreg().args(["certify", "--config", &cfg]).output().unwrap();
    assert_exit(&out, 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["certified"], serde_json::Value::Bool(true));
    assert_eq!(v["support_size"], serde_json::json!(2));
    assert!(v["sparse"]["c"].as_f64().unwrap() > 0.0);
    assert!(v["label"].as_str().unwrap().ends_with("s4"));

    let out = almreg()
        .args(["certify", "--config", &cfg])
        .env("ALMREG_SEED", "77")
        .output()
        .unwrap();
    assert_exit(&out, 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["label"].as_str().unwrap().ends_with("s77"));

    let out = almreg()
        .args(["certify", "--config", &cfg])
        .env("ALMREG_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_exit(&out, 2);
}

#[test]
fn certify_uncertified_instance_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "tv2.json",
        r#"{"problem": {"kind": "tv", "dims": [6, 6], "seed": 2},
            "solver": {"tau": 1.0},
            "stopping": {"delta0": 0.1},
            "output": {"dir": "o"}}"#,
    );
    let out = almreg().args(["certify", "--config", &cfg]).output().unwrap();
    assert_exit(&out, 1);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["certified"], serde_json::Value::Bool(false));
}

#[test]
fn csv_operator_roundtrip_and_dimension_check() {
    let dir = tempfile::tempdir().unwrap();
    let k_path = dir.path().join("k.csv");
    fs::write(&k_path, "1.0,0.0,0.5\n0.0,2.0,0.0\n").unwrap();
    let out_dir = dir.path().join("csvout");
    let cfg = write_config(
        dir.path(),
        "csv.json",
        &format!(
            r#"{{
  "problem": {{"kind": "quadratic", "dims": [2, 3], "K_kind": "csv", "k_csv": "{}", "seed": 5}},
  "solver": {{"tau": 1.0}},
  "stopping": {{"delta0": 0.05, "count": 2}},
  "output": {{"dir": "{}", "format": "json"}}
}}"#,
            k_path.to_str().unwrap(),
            out_dir.to_str().unwrap()
        ),
    );
    assert_exit(&almreg().args(["certify", "--config", &cfg]).output().unwrap(), 0);
    assert_exit(&almreg().args(["sweep", "--config", &cfg]).output().unwrap(), 0);

    // Dimensions that disagree with the file are a config error.
    let cfg_bad = write_config(
        dir.path(),
        "csv_bad.json",
        &format!(
            r#"{{
  "problem": {{"kind": "quadratic", "dims": [3, 3], "K_kind": "csv", "k_csv": "{}", "seed": 5}},
  "solver": {{"tau": 1.0}},
  "stopping": {{"delta0": 0.05, "count": 2}},
  "output": {{"dir": "o", "format": "json"}}
}}"#,
            k_path.to_str().unwrap()
        ),
    );
    assert_exit(&almreg().args(["certify", "--config", &cfg_bad]).output().unwrap(), 2);

    // The sparse generator draws its own operator; csv is rejected.
    let cfg_sparse = write_config(
        dir.path(),
        "csv_sparse.json",
        &format!(
            r#"{{
  "problem": {{"kind": "sparse", "dims": [2, 3], "support_size": 1, "K_kind": "csv", "k_csv": "{}", "seed": 5}},
  "solver": {{"tau": 1.0}},
  "stopping": {{"delta0": 0.05, "count": 2}},
  "output": {{"dir": "o", "format": "json"}}
}}"#,
            k_path.to_str().unwrap()
        ),
    );
    assert_exit(&almreg().args(["certify", "--config", &cfg_sparse]).output().unwrap(), 2);
}

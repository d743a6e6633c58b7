use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn smrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smrl"))
        .args(args)
        .env_remove("SMRL_SEED_OFFSET")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn tiny_config(out: &Path) -> String {
    format!(
        r#"{{"env_id": "two_stage_grid", "total_env_steps": 200, "seeds": [0], "eval_every": 100,
            "model": {{"hidden_units": 8, "batch": 4, "seq_len": 6}},
            "planner": {{"horizon": 3, "population": 8, "elites": 2, "iterations": 1}},
            "smoothing": {{"kind": "gaussian", "sigma": 2}},
            "out_dir": "{}"}}"#,
        out.display()
    )
}

#[test]
fn verify_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("report.json");
    let out = smrl(&["verify", "--report", report.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = fs::read_to_string(report).unwrap();
    assert!(text.contains("kernel_normalization"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&smrl(&[])), 1);
    assert_eq!(code(&smrl(&["run"])), 1);
    assert_eq!(code(&smrl(&["roll", "--env", "two_stage_grid", "--policy", "greedy", "--out", "x"])), 1);
    assert_eq!(code(&smrl(&["--help"])), 0);

    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"env_id": "two_stage_grid", "total_env_steps": 10, "out_dir": "o", "smoothing": {"kind": "gaussian", "sigma": -1}, "bogus": 1}"#);
    let out = smrl(&["run", "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let missing = tmp.path().join("absent.json");
    assert_eq!(code(&smrl(&["run", "--config", missing.to_str().unwrap()])), 1);
}

#[test]
fn run_resume_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let cfg = write_config(tmp.path(), &tiny_config(&out_dir));
    let first = smrl(&["run", "--config", &cfg]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    assert!(out_dir.join("metrics.csv").exists());
    // the directory already holds a run
    assert_eq!(code(&smrl(&["run", "--config", &cfg])), 1);
    assert_eq!(code(&smrl(&["run", "--config", &cfg, "--resume"])), 0);

    let charts = tmp.path().join("charts");
    let plot = smrl(&["plot", "--in", out_dir.to_str().unwrap(), "--out", charts.to_str().unwrap()]);
    assert_eq!(code(&plot), 0);
    assert!(charts.join("return_raw.svg").exists());
}

#[test]
fn sweep_creates_arms() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("sweep");
    let cfg = write_config(tmp.path(), &tiny_config(&out_dir));
    let out = smrl(&["sweep", "--config", &cfg, "--axis", "smoothing.sigma", "--values", "1,3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("smoothing.sigma=1/manifest.json").exists());
    assert!(out_dir.join("smoothing.sigma=3/manifest.json").exists());
}

#[test]
fn roll_honours_seed_offset_and_reports_io_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.jsonl");
    let b = tmp.path().join("b.jsonl");
    let ok = smrl(&["roll", "--env", "ambiguous_delay", "--policy", "random", "--seed", "4", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
    let shifted = Command::new(env!("CARGO_BIN_EXE_smrl"))
        .args(["roll", "--env", "ambiguous_delay", "--policy", "random", "--seed", "1", "--out", b.to_str().unwrap()])
        .env("SMRL_SEED_OFFSET", "3")
        .output()
        .unwrap();
    assert_eq!(code(&shifted), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let bad_offset = Command::new(env!("CARGO_BIN_EXE_smrl"))
        .args(["roll", "--env", "ambiguous_delay", "--out", b.to_str().unwrap()])
        .env("SMRL_SEED_OFFSET", "many")
        .output()
        .unwrap();
    assert_eq!(code(&bad_offset), 1);

    // a regular file where a directory is expected
    let blocked = a.join("episodes.jsonl");
    let out = smrl(&["roll", "--env", "ambiguous_delay", "--out", blocked.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn malformed_metrics_are_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let arm = tmp.path().join("arm");
    fs::create_dir_all(&arm).unwrap();
    fs::write(arm.join("metrics.csv"), "not,a,header\n").unwrap();
    let out = smrl(&["plot", "--in", tmp.path().to_str().unwrap(), "--out", tmp.path().join("c").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}

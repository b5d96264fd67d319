//! End-to-end tests of the binary: exit codes, console output, report
//! files, and determinism across repeated runs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_carnot");

const CHECKS: &str = r#"
[experiment]
kind = "checks"

[group]
name = "heisenberg"

[operator]
name = "infinity"
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn carnot(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_report(dir: &Path) -> Value {
    let bytes = std::fs::read(dir.join("report.json")).unwrap();
    serde_json::from_slice(&bytes).unwrap()
}

#[test]
fn validate_reports_resolution_on_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ok.toml", CHECKS);
    let out = carnot(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("ok: checks experiment on heisenberg (3d, step 2) with infinity"),
        "unexpected output: {text}"
    );
}

#[test]
fn validate_rejects_unknown_operator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        &CHECKS.replace("infinity", "warp"),
    );
    let out = carnot(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let text = stderr(&out);
    assert!(text.starts_with("error:"), "unexpected stderr: {text}");
    assert!(text.contains("warp"), "unexpected stderr: {text}");
}

#[test]
fn describe_emits_resolved_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ok.toml", CHECKS);
    let out = carnot(&["describe", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let json: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["group"], "heisenberg");
    assert_eq!(json["operator"], "infinity");
    assert_eq!(json["experiment"], "checks");
    assert_eq!(json["seed"], 1);
    assert_eq!(json["grid_shape"].as_array().unwrap().len(), 3);
}

#[test]
fn run_writes_report_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ok.toml", CHECKS);
    let out_dir = dir.path().join("out");
    let out = carnot(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("[PASS] hormander_full_rank"), "unexpected output: {text}");
    assert!(text.contains("experiment checks: PASS"), "unexpected output: {text}");
    let report = read_report(&out_dir);
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["experiment"], "checks");
    assert_eq!(report["passed"], true);
    assert_eq!(report["config"]["seed"], 1);
}

#[test]
fn quiet_flag_suppresses_check_lines() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ok.toml", CHECKS);
    let out_dir = dir.path().join("out");
    let out = carnot(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert!(stdout(&out).is_empty(), "quiet run still printed: {}", stdout(&out));
    assert!(out_dir.join("report.json").exists());
}

#[test]
fn run_flags_failing_checks_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "broken.toml",
        &CHECKS.replace("infinity", "broken"),
    );
    let out_dir = dir.path().join("out");
    let out = carnot(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr(&out));
    let report = read_report(&out_dir);
    assert_eq!(report["passed"], false);
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"ellipticity_positive"), "failed checks: {failed:?}");
}

#[test]
fn missing_config_is_a_config_error() {
    let out = carnot(&["run", "--config", "/nonexistent/nope.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn config_must_be_passed_as_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ok.toml", CHECKS);
    let out = carnot(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_override_lands_in_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ok.toml", CHECKS);
    let out_dir = dir.path().join("out");
    let out = carnot(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "9",
        "--quiet",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let report = read_report(&out_dir);
    assert_eq!(report["config"]["seed"], 9);
}

#[test]
fn reports_are_deterministic_modulo_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ok.toml", CHECKS);
    let mut normalized = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = carnot(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--quiet",
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
        let mut report = read_report(&out_dir);
        report["metadata"]["wall_time_s"] = Value::from(0.0);
        // The echoed config carries the per-run output directory.
        report["config"]["out_dir"] = Value::from("");
        normalized.push(serde_json::to_string(&report).unwrap());
    }
    assert_eq!(normalized[0], normalized[1]);
}

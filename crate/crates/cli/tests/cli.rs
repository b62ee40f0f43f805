use std::path::Path;
use std::process::{Command, Output};

fn occdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occdet")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn print_defaults_matches_snapshot() {
    let out = occdet(&["config", "print-defaults"]);
    assert!(out.status.success());
    let snapshot = include_str!("snapshots/default_config.toml");
    assert_eq!(String::from_utf8(out.stdout).unwrap(), snapshot);
}

#[test]
fn defaults_pass_config_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, include_str!("snapshots/default_config.toml")).unwrap();
    let out = occdet(&["config", "check", p(&path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, "[nms]\niou_threshold = 2.0\n").unwrap();
    let out = occdet(&["config", "check", p(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[nms]"));
}

#[test]
fn missing_input_exits_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = occdet(&["stats", "--gt", p(&dir.path().join("nope.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

#[test]
fn synth_then_stats_and_coarse_eval() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.json");
    let dets = dir.path().join("dets.json");
    let report = dir.path().join("report.json");
    let csv = dir.path().join("report.csv");
    assert!(occdet(&["synth", "--count", "4", "--out", p(&gt), "--seed", "2"]).status.success());

    let out = occdet(&["stats", "--gt", p(&gt)]);
    assert!(out.status.success());
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(stats["objects_per_image"].as_f64().unwrap() > 0.0);

    assert!(occdet(&["run-tpp", "--scenes", p(&gt), "--out", p(&dets), "--coarse-only"]).status.success());
    let out = occdet(&["eval", "--gt", p(&gt), "--dets", p(&dets), "--report", p(&report), "--csv", p(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() >= 2);
}

#[test]
fn eval_rejects_mismatched_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.json");
    let dets = dir.path().join("dets.json");
    assert!(occdet(&["synth", "--count", "2", "--out", p(&gt)]).status.success());
    std::fs::write(&dets, "[[]]").unwrap();
    let out = occdet(&["eval", "--gt", p(&gt), "--dets", p(&dets), "--report", p(&dir.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

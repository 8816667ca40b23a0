use std::path::Path;
use std::process::{Command, Output};

use nura::ScenarioConfig;

fn nura(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nura"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn scenario_path() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios/four_ue.toml")
        .display()
        .to_string()
}

#[test]
fn run_prints_allocation_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let out = nura(&["run", "--scenario", &scenario_path(), "--trace", trace.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("case = second") && stdout.contains("UE4"));
    let text = std::fs::read_to_string(trace).unwrap();
    assert!(text.starts_with("round,user_id,bid,price\n"));
}

#[test]
fn sweep_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = nura(&[
        "sweep", "--scenario", &scenario_path(), "--r-start", "5", "--r-end", "200", "--r-step", "5",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let alloc = std::fs::read_to_string(dir.path().join("allocations.csv")).unwrap();
    assert_eq!(alloc.lines().count(), 161);
    assert!(dir.path().join("app_allocations.csv").exists());
}

#[test]
fn schedule_writes_one_directory_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let schedule = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/four_ue_schedule.toml");
    let out = nura(&[
        "schedule", "--scenario", &scenario_path(), "--schedule", schedule.to_str().unwrap(),
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    for k in 1..=3 {
        assert!(dir.path().join(format!("epoch_{k}/app_allocations.csv")).exists());
    }
}

#[test]
fn validate_reports_deviations() {
    let out = nura(&["validate", "--scenario", &scenario_path(), "--r", "120"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max deviation from dual bisection oracle"));
    assert!(stdout.contains("grid search skipped"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "capacity = 10.0\n").unwrap();
    assert_eq!(nura(&["run", "--scenario", bad.to_str().unwrap()]).status.code(), Some(2));

    let missing = dir.path().join("missing.toml");
    assert_eq!(nura(&["run", "--scenario", missing.to_str().unwrap()]).status.code(), Some(4));

    let mut slow = ScenarioConfig::four_ue();
    slow.protocol.max_rounds = 2;
    let slow_path = dir.path().join("slow.toml");
    std::fs::write(&slow_path, slow.to_toml()).unwrap();
    assert_eq!(nura(&["run", "--scenario", slow_path.to_str().unwrap()]).status.code(), Some(3));
}

use std::process::{Command, Output};

fn rationing(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rationing"))
        .args(args)
        .env_remove("RATIONING_FORMAT")
        .env_remove("RATIONING_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_verbs_and_options_print_usage() {
    let o = rationing(&["frobnicate"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"));
    let o = rationing(&["tables", "--colour", "red"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn every_run_reports_its_seed() {
    let o = rationing(&["--seed", "77", "tables", "--which", "schedule"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("seed: 77"));
}

#[test]
fn environment_overrides_flags() {
    let o = Command::new(env!("CARGO_BIN_EXE_rationing"))
        .args(["tables", "--which", "profile-shares"])
        .env("RATIONING_FORMAT", "csv")
        .env("RATIONING_VALUATION", "4")
        .output()
        .unwrap();
    let text = stdout(&o);
    assert!(text.contains("# oracle: exact fractions"));
    assert!(text.contains("4,\"(3,13)\",5/147 (0.034),31/441 (0.070)"), "{text}");
}

#[test]
fn output_files_are_written_whole() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tree.csv");
    let o = rationing(&["classify-tree", "--format", "csv", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("total,1932,"));
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

#[test]
fn bad_paths_fail_with_a_diagnostic() {
    let o = rationing(&["replay", "/nonexistent/events.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/events.jsonl"));
}

#[test]
fn replayed_logs_match_the_live_run_and_pass_audit() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events");
    let live = rationing(&[
        "--valuation",
        "5",
        "--format",
        "csv",
        "simulate-pfu",
        "--seat-a",
        "myopic@2",
        "--seat-b",
        "logit:1.85,1.66",
        "--ticks",
        "120",
        "--events-dir",
        events.to_str().unwrap(),
    ]);
    assert!(live.status.success(), "{}", stderr(&live));
    let log = events.join("valuation-5.jsonl");
    let replayed = rationing(&["--format", "csv", "replay", log.to_str().unwrap()]);
    assert!(replayed.status.success(), "{}", stderr(&replayed));
    let rows = |s: String| s.lines().filter(|l| l.starts_with("1,0,PFU")).map(String::from).collect::<Vec<_>>();
    let live_rows = rows(stdout(&live));
    assert_eq!(live_rows.len(), 1);
    assert_eq!(live_rows, rows(stdout(&replayed)));

    let audit = rationing(&["audit", log.to_str().unwrap()]);
    assert_eq!(audit.status.code(), Some(0), "{}", stdout(&audit));

    let text = std::fs::read_to_string(&log).unwrap();
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, text.replacen("\"seq\":0", "\"seq\":5", 1)).unwrap();
    let audit = rationing(&["audit", tampered.to_str().unwrap()]);
    assert_eq!(audit.status.code(), Some(3), "{}", stdout(&audit));
    assert!(stdout(&audit).contains("FAIL"));
}

#[test]
fn tree_export_takes_the_valuation_from_either_position() {
    let before = rationing(&["--valuation", "3", "classify-tree", "--export"]);
    assert!(before.status.success(), "{}", stderr(&before));
    let after = rationing(&["classify-tree", "--valuation", "3", "--export"]);
    assert_eq!(stdout(&before), stdout(&after));
    let o = Command::new(env!("CARGO_BIN_EXE_rationing"))
        .args(["classify-tree", "--export"])
        .env_remove("RATIONING_VALUATION")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixdecomp"))
}

#[test]
fn analyze_writes_versioned_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["analyze", "--chain", "pince_nez:m=8", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema"], "mixdecomp-report/1");
    assert_eq!(v["sections"]["analyze"]["tau_mix"]["value"], 54.0);
}

#[test]
fn csv_format_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["analyze", "--chain", "pince_nez:m=4", "--format", "csv", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("mixing_profile.csv")).unwrap();
    assert!(csv.lines().count() > 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin().args(["analyze"]).status().unwrap().code(), Some(1));
    assert_eq!(bin().args(["frobnicate"]).status().unwrap().code(), Some(1));
    assert_eq!(bin().args(["analyze", "--kernel", "/nonexistent/k.txt"]).status().unwrap().code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing_seed = bin().args(["audit", "--chain", "pince_nez:m=4", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(missing_seed.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    assert_eq!(bin().arg("--help").status().unwrap().code(), Some(0));
}

#[test]
fn failing_suite_exits_two_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["reproduce", "--suite", "pince_nez_scaling", "--seed", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(v["sections"]["suite_pince_nez_scaling"]["passed"], false);
}

#[test]
fn passing_suite_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["reproduce", "--suite", "kcip_reversibility", "--seed", "1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

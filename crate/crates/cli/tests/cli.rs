//! Exit codes and output layout of the binary.

use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_pcrtbp-eco");

#[test]
fn bad_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[eco]\ncount = 0\n").unwrap();
    let out = Command::new(BIN).args(["eco", "--out"]).arg(dir.path().join("run")).arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn numerical_failure_writes_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    std::fs::write(&cfg, "[eco]\nmax_time = 1.0\n").unwrap();
    let run = dir.path().join("run");
    let out = Command::new(BIN).args(["eco", "--out"]).arg(&run).arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(run.join("error.json").exists());
    assert!(!run.join("manifest.json").exists());
}

#[test]
fn triple_run_lists_its_files() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = Command::new(BIN).args(["triple", "--threads", "1", "--out"]).arg(&run).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "triple");
    assert_eq!(m["files"][0]["path"], "triple.json");
    assert_eq!(m["config"]["triple"]["mu"], 1e-4);
}

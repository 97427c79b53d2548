use std::path::Path;
use std::process::{Command, Output};

use qkdsim_core::qstate::DensityMatrix;

fn qkdsim(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qkdsim"));
    cmd.args(args).env_remove("QKDSIM_OUT_DIR");
    if let Some(dir) = out_env {
        cmd.env("QKDSIM_OUT_DIR", dir);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn gen_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("default.cfg");
    let o = qkdsim(&["gen-config", "--out", cfg.to_str().unwrap()], None);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("[run]") && text.contains("coincidence_window_ps = 1000"));
    let stdout = qkdsim(&["gen-config"], None);
    assert_eq!(String::from_utf8(stdout.stdout).unwrap(), text);
}

#[test]
fn run_writes_reports_to_env_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = qkdsim(&["run", "--samples", "2", "--seconds", "0.2", "--seed", "3"], Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sessions.csv", "summary.csv", "state_metrics.csv", "correction_report.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let sessions = std::fs::read_to_string(dir.path().join("sessions.csv")).unwrap();
    assert_eq!(sessions.lines().count(), 2 + 4);

    // an explicit flag beats the environment
    let flag = dir.path().join("flag");
    let o = qkdsim(
        &["run", "--samples", "1", "--seconds", "0.1", "--out", flag.to_str().unwrap()],
        Some(dir.path()),
    );
    assert_eq!(code(&o), 0);
    assert!(flag.join("summary.csv").exists());
}

#[test]
fn streams_then_coinc() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = qkdsim(&["streams", "--out", d, "--seconds", "0.5", "--csv"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let alice = dir.path().join("alice.csv");
    let bob = dir.path().join("bob.csv");
    let o = qkdsim(&["coinc", "--alice", alice.to_str().unwrap(), "--bob", bob.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let row = out.lines().find(|l| l.starts_with("coinc,corrected,")).unwrap();
    let qber: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!(qber < 11.0, "{row}");
}

#[test]
fn tomo_then_correct() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("tomo.txt");
    let rho = dir.path().join("rho.txt");
    let o = qkdsim(
        &["tomo", "--record-out", rec.to_str().unwrap(), "--rho-out", rho.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&rec).unwrap().starts_with("tomo-v1"));
    let again = qkdsim(&["tomo", "--input", rec.to_str().unwrap()], None);
    assert_eq!(code(&again), 0);
    let o = qkdsim(&["correct", rho.to_str().unwrap()], None);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8(o.stdout).unwrap().contains("H/V arm (B1/B2): HWP"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[run]\nacquisition_seconds = -1\n").unwrap();
    assert_eq!(code(&qkdsim(&["run", "--config", bad.to_str().unwrap()], None)), 2);
    assert_eq!(code(&qkdsim(&["run", "--preset", "lunar"], None)), 2);
    assert_eq!(code(&qkdsim(&["correct", "/definitely/not/here"], None)), 1);

    let mixed = dir.path().join("mixed.txt");
    std::fs::write(&mixed, DensityMatrix::maximally_mixed().to_text()).unwrap();
    assert_eq!(code(&qkdsim(&["correct", mixed.to_str().unwrap()], None)), 3);
}

use std::f64::consts::FRAC_PI_4;

use qkdsim_core::channel::{scenario_preset, SourceModel};
use qkdsim_core::correction::BasisMode;
use qkdsim_core::harness::pipeline::period_summary;
use qkdsim_core::harness::{
    daily_cycle, default_config_text, emit_reports, run_pipeline, run_session, MeanStd, RunConfig, OUT_DIR_ENV,
};
use qkdsim_core::optics::JonesMatrix;

fn small(samples: usize, seconds: f64) -> RunConfig {
    RunConfig {
        samples_per_session: samples,
        acquisition_seconds: seconds,
        ..RunConfig::default()
    }
}

#[test]
fn session_statistics_are_recomputable_and_corrected_wins() {
    let cfg = small(6, 1.0);
    let r = run_pipeline(&cfg).unwrap();
    for m in &r.modes {
        let k: Vec<f64> = m.rows.iter().map(|x| x.keyrate_hz).collect();
        let q: Vec<f64> = m.rows.iter().filter_map(|x| x.qber_pct).collect();
        assert_eq!(MeanStd::of(&k), m.keyrate);
        assert_eq!(MeanStd::of(&q), m.qber);
        for (row, table) in m.rows.iter().zip(&m.tables) {
            assert_eq!(row.total as f64 / table.acquisition_seconds, row.keyrate_hz);
        }
    }
    let conv = r.mode(BasisMode::Conventional).unwrap();
    let corr = r.mode(BasisMode::Corrected).unwrap();
    let se = (conv.qber_sem().powi(2) + corr.qber_sem().powi(2)).sqrt();
    assert!(corr.qber.mean <= conv.qber.mean + 2.0 * se);
    assert!(corr.qber.mean < 11.0);
    assert!(r.bases.is_some());
    assert!((r.tomographic.concurrence - r.delivered.concurrence).abs() < 0.05);
}

#[test]
fn identity_channel_makes_modes_indistinguishable() {
    let cfg = small(8, 1.0);
    let mut s = scenario_preset("night-clear-10nm").unwrap();
    s.source = SourceModel::new(1e6, 0.95, 0.90).unwrap();
    s.channel.bob_unitary = JonesMatrix::identity();
    let r = run_session(&cfg, &s, 0.0, 4).unwrap();
    let a = r.mode(BasisMode::Conventional).unwrap();
    let b = r.mode(BasisMode::Corrected).unwrap();
    let spread = (a.qber.std.powi(2) + b.qber.std.powi(2)).sqrt();
    assert!((a.qber.mean - b.qber.mean).abs() < 2.0 * spread, "{} vs {}", a.qber.mean, b.qber.mean);
}

#[test]
fn rotated_frame_breaks_conventional_only() {
    let cfg = small(5, 1.0);
    let mut s = scenario_preset("night-clear-10nm").unwrap();
    s.source = SourceModel::new(1e6, 0.95, 0.90).unwrap();
    s.channel.bob_unitary = JonesMatrix::rotator(FRAC_PI_4);
    let r = run_session(&cfg, &s, 0.0, 5).unwrap();
    let conv = r.mode(BasisMode::Conventional).unwrap().qber.mean;
    let corr = r.mode(BasisMode::Corrected).unwrap().qber.mean;
    assert!((conv - 50.0).abs() < 3.0, "{conv}");
    assert!(corr < 11.0, "{corr}");
}

#[test]
fn night_not_worse_than_day_under_equal_loss() {
    let mut cfg = small(10, 2.0);
    cfg.basis_modes = vec![BasisMode::Corrected];
    cfg.schedule.slot_hours = 6.0;
    // same link loss day and night, only the background differs
    cfg.overrides.insert("channel.bob_transmission".into(), "0.19".into());
    let reports = daily_cycle(&cfg).unwrap();
    assert_eq!(reports.len(), 4);
    let day = period_summary(&reports, BasisMode::Corrected, true);
    let night = period_summary(&reports, BasisMode::Corrected, false);
    assert!(day.sessions > 0 && night.sessions > 0);
    assert!(night.keyrate.mean >= day.keyrate.mean - day.keyrate.std);
    assert!(night.qber.mean <= day.qber.mean);
}

#[test]
fn daily_uses_schedule_and_presets() {
    let mut cfg = small(1, 0.2);
    cfg.basis_modes = vec![BasisMode::Conventional];
    let reports = daily_cycle(&cfg).unwrap();
    assert_eq!(reports.len(), 12);
    for r in &reports {
        let expect_day = (8.0..18.0).contains(&r.hour);
        assert_eq!(r.daytime, expect_day);
        assert_eq!(r.scenario, if expect_day { "day-sunny-10nm" } else { "night-clear-10nm" });
        assert!(r.bases.is_none());
    }
}

#[test]
fn reports_have_versioned_headers() {
    let dir = tempfile::tempdir().unwrap();
    emit_reports(&[], dir.path()).unwrap();
    for (name, schema) in [
        ("sessions.csv", "#schema=qkdsim.sessions.v1"),
        ("summary.csv", "#schema=qkdsim.summary.v1"),
        ("state_metrics.csv", "#schema=qkdsim.state_metrics.v1"),
    ] {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2, "{name}");
        assert_eq!(lines[0], schema);
    }
    let sessions = std::fs::read_to_string(dir.path().join("sessions.csv")).unwrap();
    assert!(sessions.lines().nth(1).unwrap().ends_with("keyrate_hz,qber_pct,total,errors,secure"));
}

#[test]
fn config_file_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("default.cfg");
    std::fs::write(&path, default_config_text()).unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg, RunConfig::default());

    std::env::set_var(OUT_DIR_ENV, dir.path().join("elsewhere"));
    let cfg = cfg.with_env_output_dir();
    std::env::remove_var(OUT_DIR_ENV);
    assert_eq!(cfg.output_dir, dir.path().join("elsewhere"));

    let missing = RunConfig::load(&dir.path().join("nope.cfg")).unwrap_err();
    assert_eq!(missing.exit_code(), 1);
}

#[test]
fn pipeline_errors_carry_stage() {
    let mut cfg = small(1, 0.1);
    cfg.overrides.insert("source.concurrence".into(), "0.1".into());
    cfg.overrides.insert("source.fidelity".into(), "0.3".into());
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(err.to_string().starts_with("correction"), "{err}");
    assert_eq!(err.exit_code(), 3);
}

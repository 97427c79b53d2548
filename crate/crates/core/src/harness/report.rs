//! CSV and text reports. Every CSV starts with a `#schema=` line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::pipeline::{period_summary, MeanStd, SessionReport};
use crate::correction::BasisMode;
use crate::error::{Error, Result};
use crate::protocol::CSV_HEADER;

pub const SESSIONS_SCHEMA: &str = "#schema=qkdsim.sessions.v1";
pub const SUMMARY_SCHEMA: &str = "#schema=qkdsim.summary.v1";
pub const STATE_SCHEMA: &str = "#schema=qkdsim.state_metrics.v1";
pub const DAYNIGHT_SCHEMA: &str = "#schema=qkdsim.daynight.v1";

const MODES: [BasisMode; 2] = [BasisMode::Conventional, BasisMode::Corrected];

fn num(x: f64, digits: usize) -> String {
    if x.is_finite() {
        format!("{x:.digits$}")
    } else {
        String::new()
    }
}

fn opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(String::new, |v| num(v, digits))
}

pub fn sessions_csv(reports: &[SessionReport]) -> String {
    let mut s = format!("{SESSIONS_SCHEMA}\nsession,scenario,{CSV_HEADER}\n");
    for r in reports {
        for m in &r.modes {
            for row in &m.rows {
                let _ = writeln!(s, "{},{},{}", r.label, r.scenario, row.csv_row());
            }
        }
    }
    s
}

pub fn summary_csv(reports: &[SessionReport]) -> String {
    let mut s = format!("{SUMMARY_SCHEMA}\nsession,hour,scenario,period");
    for mode in MODES {
        for col in [
            "samples",
            "keyrate_mean_hz",
            "keyrate_std_hz",
            "qber_mean_pct",
            "qber_std_pct",
            "secure_fraction",
            "visibility_hv_pct",
            "visibility_da_pct",
        ] {
            let _ = write!(s, ",{mode}_{col}");
        }
    }
    s.push('\n');
    for r in reports {
        let _ = write!(
            s,
            "{},{},{},{}",
            r.label,
            num(r.hour, 2),
            r.scenario,
            if r.daytime { "day" } else { "night" }
        );
        for mode in MODES {
            match r.mode(mode) {
                Some(m) => {
                    let _ = write!(
                        s,
                        ",{},{},{},{},{},{},{},{}",
                        m.rows.len(),
                        num(m.keyrate.mean, 3),
                        num(m.keyrate.std, 3),
                        num(m.qber.mean, 4),
                        num(m.qber.std, 4),
                        num(m.secure_fraction, 4),
                        opt(m.visibility.map(|v| v.hv), 3),
                        opt(m.visibility.map(|v| v.da), 3),
                    );
                }
                None => s.push_str(",,,,,,,,"),
            }
        }
        s.push('\n');
    }
    s
}

pub fn state_metrics_csv(reports: &[SessionReport]) -> String {
    let mut s = format!(
        "{STATE_SCHEMA}\nsession,hour,scenario,delivered_fidelity,delivered_concurrence,\
         tomo_fidelity,tomo_concurrence,tomo_purity,tomo_max_residual,nearest_pure_fidelity,\
         hwp_hv_deg,qwp_hv_deg,hwp_da_deg,qwp_da_deg\n"
    );
    for r in reports {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.label,
            num(r.hour, 2),
            r.scenario,
            num(r.delivered.fidelity_psi_plus, 6),
            num(r.delivered.concurrence, 6),
            num(r.tomographic.fidelity_psi_plus, 6),
            num(r.tomographic.concurrence, 6),
            num(r.tomographic.purity, 6),
            num(r.tomography_residual, 6),
        );
        match &r.bases {
            Some(b) => {
                let (h1, q1) = b.hv_setting.degrees();
                let (h2, q2) = b.da_setting.degrees();
                let _ = writeln!(
                    s,
                    ",{},{},{},{},{}",
                    num(b.source_fidelity, 6),
                    num(h1, 4),
                    num(q1, 4),
                    num(h2, 4),
                    num(q2, 4)
                );
            }
            None => s.push_str(",,,,,\n"),
        }
    }
    s
}

pub fn daynight_csv(reports: &[SessionReport]) -> String {
    let mut s = format!(
        "{DAYNIGHT_SCHEMA}\nperiod,basis_mode,sessions,keyrate_mean_hz,keyrate_std_hz,qber_mean_pct,qber_std_pct\n"
    );
    for (name, daytime) in [("day", true), ("night", false)] {
        for mode in MODES {
            let p = period_summary(reports, mode, daytime);
            let f = |m: MeanStd, d| (num(m.mean, d), num(m.std, d));
            let (km, ks) = f(p.keyrate, 3);
            let (qm, qs) = f(p.qber, 4);
            let _ = writeln!(s, "{name},{mode},{},{km},{ks},{qm},{qs}", p.sessions);
        }
    }
    s
}

pub fn correction_report(reports: &[SessionReport]) -> String {
    let mut s = String::from("qkdsim correction report\n");
    for r in reports {
        let _ = writeln!(s, "\n== session {} ({}) ==", r.label, r.scenario);
        let _ = writeln!(
            s,
            "tomographic state: fidelity(Psi+) = {:.6}, concurrence = {:.6}, purity = {:.6}, max residual = {:.6}{}",
            r.tomographic.fidelity_psi_plus,
            r.tomographic.concurrence,
            r.tomographic.purity,
            r.tomography_residual,
            if r.tomography_warning { " (WARNING: large residual)" } else { "" }
        );
        match &r.bases {
            Some(b) => {
                s.push_str(&b.report());
                if b.low_concurrence_warning {
                    s.push_str("WARNING: concurrence below 0.7, corrected bases are unreliable\n");
                }
            }
            None => s.push_str("corrected bases not derived (conventional mode only)\n"),
        }
        for m in &r.modes {
            let _ = writeln!(
                s,
                "{}: keyrate {} +/- {} Hz, QBER {} +/- {} %, secure {}/{}",
                m.mode,
                num(m.keyrate.mean, 1),
                num(m.keyrate.std, 1),
                num(m.qber.mean, 3),
                num(m.qber.std, 3),
                m.rows.iter().filter(|r| r.secure).count(),
                m.rows.len()
            );
        }
    }
    s
}

/// Writes sessions.csv, summary.csv, state_metrics.csv, daynight.csv and
/// correction_report.txt into `dir`, creating it if needed.
pub fn emit_reports(reports: &[SessionReport], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("sessions.csv", sessions_csv(reports)),
        ("summary.csv", summary_csv(reports)),
        ("state_metrics.csv", state_metrics_csv(reports)),
        ("daynight.csv", daynight_csv(reports)),
        ("correction_report.txt", correction_report(reports)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

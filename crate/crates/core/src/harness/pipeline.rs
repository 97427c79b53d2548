//! Source → channel → tomography → correction → timestamps → protocol.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::config::RunConfig;
use crate::channel::{scramble, Scenario};
use crate::correction::{derive_corrected_bases, BasisMode, CorrectedBasisSet, MeasurementConfig};
use crate::error::{Error, Result, StageExt};
use crate::protocol::{evaluate, ProtocolResult};
use crate::qstate::{bell_psi_plus, concurrence, fidelity_with_pure, purity, DensityMatrix};
use crate::timetag::{count_coincidences, find_delay, generate_streams, optimize_window, CoincidenceTable};
use crate::tomography::{reconstruct, simulate_tomography, Reconstruction};

/// Independent 64-bit stream seeds from a base seed and a path of indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    path.iter().fold(mix(base), |acc, &k| mix(acc ^ mix(k)))
}

/// Visibility in percent for the H/V and D/A analyzer pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Visibility {
    pub hv: f64,
    pub da: f64,
}

/// V = (C_max − C_min)/(C_max + C_min) × 100 per basis, with C_max the
/// correlated pairs (A1B1 + A2B2, A3B3 + A4B4) and C_min the anti-correlated ones.
pub fn visibility(table: &CoincidenceTable) -> Result<Visibility> {
    let c = &table.counts;
    let one = |i: usize| -> Result<f64> {
        let (p, q) = (i, i + 1);
        let hi = (c[p][p] + c[q][q]) as f64;
        let lo = (c[p][q] + c[q][p]) as f64;
        if hi + lo == 0.0 {
            return Err(Error::InsufficientData(format!(
                "no coincidences in the A{}/A{} basis",
                p + 1,
                q + 1
            )));
        }
        Ok(100.0 * (hi - lo) / (hi + lo))
    };
    Ok(Visibility { hv: one(0)?, da: one(2)? })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateMetrics {
    pub fidelity_psi_plus: f64,
    pub concurrence: f64,
    pub purity: f64,
}

impl StateMetrics {
    pub fn of(rho: &DensityMatrix) -> Self {
        Self {
            fidelity_psi_plus: fidelity_with_pure(rho, &bell_psi_plus()),
            concurrence: concurrence(rho),
            purity: purity(rho),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for fewer than two values.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// One basis mode within a session.
#[derive(Debug, Clone)]
pub struct ModeReport {
    pub mode: BasisMode,
    pub rows: Vec<ProtocolResult>,
    pub tables: Vec<CoincidenceTable>,
    pub keyrate: MeanStd,
    /// Over samples with a defined QBER.
    pub qber: MeanStd,
    pub secure_fraction: f64,
    /// From the coincidences summed over all samples.
    pub visibility: Option<Visibility>,
}

impl ModeReport {
    pub fn from_rows(mode: BasisMode, rows: Vec<ProtocolResult>, tables: Vec<CoincidenceTable>) -> Self {
        let keyrates: Vec<f64> = rows.iter().map(|r| r.keyrate_hz).collect();
        let qbers: Vec<f64> = rows.iter().filter_map(|r| r.qber_pct).collect();
        let secure = rows.iter().filter(|r| r.secure).count();
        let mut sum = [[0u64; 4]; 4];
        for t in &tables {
            for i in 0..4 {
                for j in 0..4 {
                    sum[i][j] += t.counts[i][j];
                }
            }
        }
        let secs = tables.iter().map(|t| t.acquisition_seconds).sum();
        Self {
            mode,
            keyrate: MeanStd::of(&keyrates),
            qber: MeanStd::of(&qbers),
            secure_fraction: if rows.is_empty() { 0.0 } else { secure as f64 / rows.len() as f64 },
            visibility: visibility(&CoincidenceTable::from_counts(sum, secs)).ok(),
            rows,
            tables,
        }
    }

    /// Standard error of the mean QBER.
    pub fn qber_sem(&self) -> f64 {
        let n = self.rows.iter().filter(|r| r.qber_pct.is_some()).count();
        if n == 0 {
            f64::NAN
        } else {
            self.qber.std / (n as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionReport {
    /// `HH:MM` start of the session.
    pub label: String,
    pub hour: f64,
    pub scenario: String,
    pub daytime: bool,
    /// State reaching the analyzers.
    pub delivered: StateMetrics,
    pub tomographic_state: DensityMatrix,
    pub tomographic: StateMetrics,
    pub tomography_residual: f64,
    pub tomography_warning: bool,
    pub bases: Option<CorrectedBasisSet>,
    pub modes: Vec<ModeReport>,
}

impl SessionReport {
    pub fn mode(&self, mode: BasisMode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

pub fn hour_label(hour: f64) -> String {
    let minutes = (hour * 60.0).round() as i64;
    format!("{:02}:{:02}", minutes.div_euclid(60).rem_euclid(24), minutes.rem_euclid(60))
}

fn sample_label(hour: f64, offset_s: f64) -> String {
    let secs = (hour * 3600.0 + offset_s).round() as i64;
    format!(
        "{:02}:{:02}:{:02}",
        secs.div_euclid(3600).rem_euclid(24),
        secs.rem_euclid(3600) / 60,
        secs.rem_euclid(60)
    )
}

/// One session of `config.scenario` at `config.hour`.
pub fn run_pipeline(config: &RunConfig) -> Result<SessionReport> {
    config.validate()?;
    let scenario = config.resolve_scenario(&config.scenario)?;
    run_session(config, &scenario, config.hour, config.seed)
}

/// Delivered state, its tomographic estimate and the bases derived from it.
#[derive(Debug, Clone)]
pub struct PreparedState {
    pub delivered: DensityMatrix,
    pub reconstruction: Reconstruction,
    pub bases: Option<CorrectedBasisSet>,
}

impl PreparedState {
    pub fn measurement(&self, mode: BasisMode) -> Result<MeasurementConfig> {
        match mode {
            BasisMode::Conventional => Ok(MeasurementConfig::conventional()),
            BasisMode::Corrected => match &self.bases {
                Some(b) => Ok(MeasurementConfig::corrected(b)),
                None => Err(Error::Config("corrected mode requested without derived bases".into())),
            },
        }
    }
}

/// Source, channel, tomography and (when `derive_bases`) basis correction.
pub fn prepare_state(
    config: &RunConfig,
    scenario: &Scenario,
    hour: f64,
    seed: u64,
    derive_bases: bool,
) -> Result<PreparedState> {
    let source = scenario.source.state_at(hour).stage("source")?;
    let u = scenario.channel.unitary_at(hour, scenario.source.drift.as_ref());
    let delivered = scramble(&source, &u).stage("channel")?;

    let det = &scenario.detector;
    let pair_rate = scenario.source.pair_rate
        * scenario.channel.alice_transmission
        * scenario.channel.bob_transmission
        * det.efficiency
        * det.efficiency;
    let record = simulate_tomography(
        &delivered,
        pair_rate,
        config.tomography_seconds_per_projection,
        derive_seed(seed, &[0]),
    )
    .stage("tomography")?;
    let reconstruction = reconstruct(&record).stage("tomography")?;
    let bases = if derive_bases {
        Some(derive_corrected_bases(&reconstruction.state).stage("correction")?)
    } else {
        None
    };
    Ok(PreparedState {
        delivered,
        reconstruction,
        bases,
    })
}

/// One session of an explicit scenario at a given hour.
pub fn run_session(config: &RunConfig, scenario: &Scenario, hour: f64, seed: u64) -> Result<SessionReport> {
    let prepared = prepare_state(
        config,
        scenario,
        hour,
        seed,
        config.basis_modes.contains(&BasisMode::Corrected),
    )?;
    let delivered = &prepared.delivered;

    let mut modes = Vec::new();
    for (m, &mode) in config.basis_modes.iter().enumerate() {
        let measurement = prepared.measurement(mode)?;
        let results: Vec<(ProtocolResult, CoincidenceTable)> = (0..config.samples_per_session)
            .into_par_iter()
            .map(|k| {
                let sample_seed = derive_seed(seed, &[1, m as u64, k as u64]);
                run_sample(config, scenario, delivered, &measurement, mode, sample_seed)
                    .map(|(mut r, t)| {
                        r.timestamp_label = sample_label(hour, k as f64 * config.acquisition_seconds);
                        (r, t)
                    })
            })
            .collect::<Result<_>>()?;
        let (rows, tables) = results.into_iter().unzip();
        modes.push(ModeReport::from_rows(mode, rows, tables));
    }

    Ok(SessionReport {
        label: hour_label(hour),
        hour,
        scenario: scenario.name.clone(),
        daytime: config.schedule.is_day(hour),
        delivered: StateMetrics::of(delivered),
        tomographic: StateMetrics::of(&prepared.reconstruction.state),
        tomography_residual: prepared.reconstruction.max_residual,
        tomography_warning: prepared.reconstruction.residual_warning,
        tomographic_state: prepared.reconstruction.state,
        bases: prepared.bases,
        modes,
    })
}

fn run_sample(
    config: &RunConfig,
    scenario: &Scenario,
    rho: &DensityMatrix,
    measurement: &MeasurementConfig,
    mode: BasisMode,
    seed: u64,
) -> Result<(ProtocolResult, CoincidenceTable)> {
    let mut sc = scenario.clone();
    let fluct = sc.channel.transmission_fluctuation;
    if fluct > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
        let z: f64 = StandardNormal.sample(&mut rng);
        sc.channel.bob_transmission = (sc.channel.bob_transmission * (1.0 + fluct * z)).clamp(0.0, 1.0);
    }
    let (a, b) = generate_streams(rho, measurement, &sc, config.acquisition_seconds, derive_seed(seed, &[1]))
        .stage("timetag")?;
    let delay = find_delay(&a, &b, config.search_range_ps, config.correlation_bin_ps).stage("delay search")?;
    let table = if config.optimize_window {
        optimize_window(&a, &b, delay, config.qber_limit, &config.window_grid_ps)
            .stage("window optimization")?
            .table
    } else {
        count_coincidences(&a, &b, delay, config.coincidence_window_ps)
    };
    let result = evaluate(&table, mode, "", config.qber_limit);
    Ok((result, table))
}

/// One session per schedule slot; daytime slots use the day preset.
pub fn daily_cycle(config: &RunConfig) -> Result<Vec<SessionReport>> {
    config.validate()?;
    let day = config.resolve_scenario(&config.day_scenario)?;
    let night = config.resolve_scenario(&config.night_scenario)?;
    config
        .schedule
        .slots()
        .into_par_iter()
        .enumerate()
        .map(|(k, hour)| {
            let scenario = if config.schedule.is_day(hour) { &day } else { &night };
            run_session(config, scenario, hour, derive_seed(config.seed, &[2, k as u64]))
                .stage("session")
        })
        .collect()
}

/// Mean ± sample std of per-session mean keyrate and QBER over day or night sessions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodSummary {
    pub sessions: usize,
    pub keyrate: MeanStd,
    pub qber: MeanStd,
}

pub fn period_summary(reports: &[SessionReport], mode: BasisMode, daytime: bool) -> PeriodSummary {
    let (mut k, mut q) = (Vec::new(), Vec::new());
    for r in reports.iter().filter(|r| r.daytime == daytime) {
        if let Some(m) = r.mode(mode) {
            k.extend(m.rows.iter().map(|x| x.keyrate_hz));
            q.extend(m.rows.iter().filter_map(|x| x.qber_pct));
        }
    }
    PeriodSummary {
        sessions: reports.iter().filter(|r| r.daytime == daytime).count(),
        keyrate: MeanStd::of(&k),
        qber: MeanStd::of(&q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visibility_cases() {
        let mut c = [[0u64; 4]; 4];
        c[0][0] = 500;
        c[1][1] = 500;
        c[2][2] = 10;
        c[3][3] = 10;
        c[2][3] = 10;
        c[3][2] = 10;
        let v = visibility(&CoincidenceTable::from_counts(c, 1.0)).unwrap();
        assert_eq!(v.hv, 100.0);
        assert_eq!(v.da, 0.0);
        let empty = CoincidenceTable::from_counts([[0; 4]; 4], 1.0);
        assert!(visibility(&empty).is_err());
    }

    #[test]
    fn werner_visibility_from_born_rule() {
        let rho = DensityMatrix::werner(0.9);
        let p = MeasurementConfig::conventional().joint_probabilities(&rho);
        let scaled = p.map(|row| row.map(|x| (x * 1e9).round() as u64));
        let v = visibility(&CoincidenceTable::from_counts(scaled, 1.0)).unwrap();
        assert!((v.hv - 90.0).abs() < 1e-6 && (v.da - 90.0).abs() < 1e-6);
    }

    #[test]
    fn mean_std_matches_textbook() {
        let m = MeanStd::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m.mean, 5.0);
        assert!((m.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[3.0]).std, 0.0);
    }

    #[test]
    fn labels() {
        assert_eq!(hour_label(8.0), "08:00");
        assert_eq!(hour_label(13.5), "13:30");
        assert_eq!(sample_label(8.0, 290.0), "08:04:50");
        assert_eq!(sample_label(23.99, 3600.0), "00:59:24");
    }

    #[test]
    fn seeds_differ_by_path() {
        let s = [derive_seed(1, &[0]), derive_seed(1, &[1]), derive_seed(2, &[0]), derive_seed(1, &[0, 0])];
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
    }
}

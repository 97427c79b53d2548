//! Physical models for the link: the entangled-pair source, the polarization
//! scrambling on Bob's arm, transmission losses, background light and the
//! single-photon detectors, plus the named scenario presets.
//!
//! All rate constants are calibration parameters. The presets are tuned so a
//! 10 s acquisition lands near the day and night keyrate/QBER levels of a
//! 50 m free-space link; they are not measured ground truth.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::optics::JonesMatrix;
use crate::qstate::{c, re, DensityMatrix, TwoQubitState, FRAC_1_SQRT_2};
use crate::timetag::ClockModel;

/// Filter width at which `NoiseModel::background_rate_10nm` is specified.
pub const REFERENCE_FWHM_NM: f64 = 10.0;

/// (|HV⟩ + e^{iχ}|VH⟩)/√2
fn phased_bell(chi: f64) -> TwoQubitState {
    TwoQubitState::new([
        re(0.0),
        re(FRAC_1_SQRT_2),
        c(chi.cos(), chi.sin()) * FRAC_1_SQRT_2,
        re(0.0),
    ])
    .expect("unit vector")
}

/// Fidelity interval reachable by the source family at a given concurrence.
pub fn feasible_fidelity_range(concurrence: f64) -> (f64, f64) {
    if concurrence <= 0.0 {
        (1.0 / 6.0, 0.5)
    } else {
        ((1.0 - concurrence) / 6.0, (1.0 + concurrence) / 2.0)
    }
}

/// Source state ρ = w·|Ψχ⟩⟨Ψχ| + (1 − w)·I/4 with Ψχ = (|HV⟩ + e^{iχ}|VH⟩)/√2.
///
/// The concurrence of this family is max(0, (3w − 1)/2) and its overlap with
/// |Ψ+⟩ is w·cos²(χ/2) + (1 − w)/4, so both targets are met in closed form:
/// w from the concurrence, then χ from the fidelity.
pub fn build_source_state(target_fidelity: f64, target_concurrence: f64) -> Result<DensityMatrix> {
    let infeasible = |region: String| Error::Infeasible {
        fidelity: target_fidelity,
        concurrence: target_concurrence,
        region,
    };
    if !(0.0..=1.0).contains(&target_fidelity) || !(0.0..=1.0).contains(&target_concurrence) {
        return Err(infeasible("targets must lie in [0, 1]".into()));
    }
    let (lo, hi) = feasible_fidelity_range(target_concurrence);
    if target_fidelity < lo - 1e-12 || target_fidelity > hi + 1e-12 {
        return Err(infeasible(format!(
            "at concurrence C the fidelity to Ψ+ must lie in [(1 − C)/6, (1 + C)/2] = [{lo:.6}, {hi:.6}]"
        )));
    }
    let w = if target_concurrence <= 0.0 {
        1.0 / 3.0
    } else {
        (2.0 * target_concurrence + 1.0) / 3.0
    };
    let cos2 = ((target_fidelity - (1.0 - w) / 4.0) / w).clamp(0.0, 1.0);
    let chi = 2.0 * cos2.sqrt().acos();
    Ok(DensityMatrix::pure(&phased_bell(chi)).mix(&DensityMatrix::maximally_mixed(), w))
}

/// Slow sinusoidal modulation over a simulated day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drift {
    pub concurrence_amplitude: f64,
    /// Extra rotation of Bob's polarization frame, radians.
    pub scrambler_amplitude: f64,
    pub period_hours: f64,
}

impl Drift {
    fn phase(&self, hour: f64) -> f64 {
        (2.0 * PI * hour / self.period_hours).sin()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub pair_rate: f64,
    pub target_fidelity: f64,
    pub target_concurrence: f64,
    pub drift: Option<Drift>,
}

impl SourceModel {
    pub fn new(pair_rate: f64, target_fidelity: f64, target_concurrence: f64) -> Result<Self> {
        if !(pair_rate > 0.0) {
            return Err(Error::Config(format!("pair rate must be positive, got {pair_rate}")));
        }
        build_source_state(target_fidelity, target_concurrence)?;
        Ok(Self {
            pair_rate,
            target_fidelity,
            target_concurrence,
            drift: None,
        })
    }

    pub fn state(&self) -> Result<DensityMatrix> {
        build_source_state(self.target_fidelity, self.target_concurrence)
    }

    /// Source state at a wall-clock hour, with drift applied when configured.
    pub fn state_at(&self, hour: f64) -> Result<DensityMatrix> {
        match self.drift {
            None => self.state(),
            Some(d) => {
                let conc = (self.target_concurrence + d.concurrence_amplitude * d.phase(hour))
                    .clamp(0.0, 1.0);
                let (lo, hi) = feasible_fidelity_range(conc);
                build_source_state(self.target_fidelity.clamp(lo, hi), conc)
            }
        }
    }
}

/// U = Rz(a)·Ry(b)·Rz(c), angles in radians.
pub fn euler_unitary(a: f64, b: f64, c_: f64) -> JonesMatrix {
    let rz = |phi: f64| {
        Matrix2::new(
            c((-phi / 2.0).cos(), (-phi / 2.0).sin()),
            re(0.0),
            re(0.0),
            c((phi / 2.0).cos(), (phi / 2.0).sin()),
        )
    };
    let (s, co) = (b / 2.0).sin_cos();
    let ry = Matrix2::new(re(co), re(-s), re(s), re(co));
    JonesMatrix(rz(a) * ry * rz(c_))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub bob_unitary: JonesMatrix,
    pub alice_transmission: f64,
    pub bob_transmission: f64,
    /// Relative standard deviation of Bob's transmission between acquisitions.
    pub transmission_fluctuation: f64,
    pub free_space_length_m: f64,
}

impl ChannelModel {
    pub fn new(
        bob_unitary: JonesMatrix,
        alice_transmission: f64,
        bob_transmission: f64,
    ) -> Result<Self> {
        let dev = bob_unitary.unitarity_deviation();
        if dev > 1e-10 {
            return Err(Error::NonUnitary { deviation: dev });
        }
        for (name, t) in [("alice", alice_transmission), ("bob", bob_transmission)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} transmission {t} outside [0, 1]")));
            }
        }
        Ok(Self {
            bob_unitary,
            alice_transmission,
            bob_transmission,
            transmission_fluctuation: 0.0,
            free_space_length_m: 50.0,
        })
    }

    pub fn unitary_at(&self, hour: f64, drift: Option<&Drift>) -> JonesMatrix {
        match drift {
            Some(d) if d.scrambler_amplitude != 0.0 => {
                JonesMatrix::rotator(d.scrambler_amplitude * d.phase(hour)) * self.bob_unitary
            }
            _ => self.bob_unitary,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Background singles per Bob detector with a 10 nm filter at daylight factor 1.
    pub background_rate_10nm: f64,
    pub filter_fwhm_nm: f64,
    pub daylight_factor: f64,
    /// Per detector, all eight detectors.
    pub dark_count_rate: f64,
}

impl NoiseModel {
    /// Unpolarized background reaching each of Bob's detectors, linear in filter width.
    pub fn background_singles_rate_per_detector(&self) -> f64 {
        self.background_rate_10nm * self.daylight_factor * self.filter_fwhm_nm / REFERENCE_FWHM_NM
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("background rate", self.background_rate_10nm),
            ("filter width", self.filter_fwhm_nm),
            ("daylight factor", self.daylight_factor),
            ("dark count rate", self.dark_count_rate),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite non-negative number")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub jitter_sigma_ps: f64,
    pub dead_time_ps: u64,
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::Config(format!("detector efficiency {} outside [0, 1]", self.efficiency)));
        }
        if !(self.jitter_sigma_ps >= 0.0) {
            return Err(Error::Config("jitter must be non-negative".into()));
        }
        Ok(())
    }
}

/// (I ⊗ U) ρ (I ⊗ U)†
pub fn scramble(rho: &DensityMatrix, u: &JonesMatrix) -> Result<DensityMatrix> {
    let dev = u.unitarity_deviation();
    if dev > 1e-10 {
        return Err(Error::NonUnitary { deviation: dev });
    }
    Ok(rho.conjugate_local(&Matrix2::identity(), u.matrix()))
}

/// Haar-random SU(2) element from a normalized Gaussian quaternion.
pub fn random_scrambler(seed: u64) -> JonesMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    haar_su2(&mut rng)
}

pub fn haar_su2<R: rand::Rng>(rng: &mut R) -> JonesMatrix {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [a, b, c_, d] = q.map(|x| x / n);
    JonesMatrix(Matrix2::new(c(a, b), c(c_, d), c(-c_, d), c(a, -b)))
}

/// A complete parameter bundle for one link condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub source: SourceModel,
    pub channel: ChannelModel,
    pub noise: NoiseModel,
    pub detector: DetectorModel,
    pub clock: ClockModel,
}

pub const PRESET_NAMES: [&str; 5] = [
    "night-clear-10nm",
    "day-sunny-10nm",
    "day-rain-3nm",
    "night-rain-10nm",
    "custom",
];

/// Fixed fiber-plus-frame scrambling on Bob's arm used by every preset (degrees).
pub const PRESET_SCRAMBLER_EULER_DEG: [f64; 3] = [37.0, 71.0, -23.0];

pub const NIGHT_DAYLIGHT_FACTOR: f64 = 0.02;

pub fn scenario_preset(name: &str) -> Result<Scenario> {
    // Delivered two-photon state: 70 % overlap with Ψ+ between the two sites.
    let source = SourceModel::new(1.0e6, 0.70, 0.72)?;
    let [a, b, c_] = PRESET_SCRAMBLER_EULER_DEG.map(f64::to_radians);
    let mut channel = ChannelModel::new(euler_unitary(a, b, c_), 0.19, 0.19)?;
    channel.transmission_fluctuation = 0.12;
    let mut noise = NoiseModel {
        background_rate_10nm: 300_000.0,
        filter_fwhm_nm: 10.0,
        daylight_factor: NIGHT_DAYLIGHT_FACTOR,
        dark_count_rate: 300.0,
    };
    let detector = DetectorModel {
        efficiency: 0.6,
        jitter_sigma_ps: 350.0,
        dead_time_ps: 22_000,
    };
    let clock = ClockModel {
        initial_offset_ps: 412_345,
        drift_ps_per_s: 10_000.0,
        pps_discipline: true,
    };
    match name {
        "night-clear-10nm" | "custom" => {}
        "day-sunny-10nm" => {
            noise.daylight_factor = 1.0;
            channel.bob_transmission = 0.165;
        }
        "day-rain-3nm" => {
            noise.daylight_factor = 0.6;
            noise.filter_fwhm_nm = 3.0;
            channel.bob_transmission = 0.17;
        }
        "night-rain-10nm" => {
            channel.bob_transmission = 0.15;
        }
        other => {
            return Err(Error::UnknownPreset {
                name: other.to_string(),
                available: PRESET_NAMES.join(", "),
            })
        }
    }
    Ok(Scenario {
        name: name.to_string(),
        source,
        channel,
        noise,
        detector,
        clock,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{bell_psi_plus, concurrence, eigendecompose, fidelity_with_pure};

    #[test]
    fn ideal_targets_give_bell_state() {
        let rho = build_source_state(1.0, 1.0).unwrap();
        assert!(rho.max_abs_diff(&DensityMatrix::pure(&bell_psi_plus())) < 1e-12);
    }

    #[test]
    fn reported_source_metrics_are_met() {
        let rho = build_source_state(0.89, 0.90).unwrap();
        assert!((fidelity_with_pure(&rho, &bell_psi_plus()) - 0.89).abs() < 1e-6);
        assert!((concurrence(&rho) - 0.90).abs() < 1e-6);
        assert!(DensityMatrix::new(*rho.matrix()).is_ok());
    }

    #[test]
    fn infeasible_targets_rejected() {
        // (1 + 0.9)/2 = 0.95 is the largest overlap reachable at C = 0.9
        let err = build_source_state(0.97, 0.9).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
        assert!(err.to_string().contains("0.950000"));
        assert!(build_source_state(0.01, 0.9).is_err());
        assert!(build_source_state(0.9, 1.0).is_ok());
        assert!(build_source_state(1.2, 0.5).is_err());
    }

    #[test]
    fn feasible_grid_always_valid() {
        for ci in 0..=10 {
            let conc = ci as f64 / 10.0;
            let (lo, hi) = feasible_fidelity_range(conc);
            for fi in 0..=10 {
                let f = lo + (hi - lo) * fi as f64 / 10.0;
                let rho = build_source_state(f, conc).unwrap();
                assert!(DensityMatrix::new(*rho.matrix()).is_ok());
                assert!((fidelity_with_pure(&rho, &bell_psi_plus()) - f).abs() < 1e-6);
                assert!((concurrence(&rho) - conc).abs() < 1e-6, "C {conc} F {f}");
            }
        }
    }

    #[test]
    fn scramble_identity_and_spectrum() {
        let rho = build_source_state(0.89, 0.9).unwrap();
        let same = scramble(&rho, &JonesMatrix::identity()).unwrap();
        assert!(same.max_abs_diff(&rho) < 1e-15);

        let u = random_scrambler(5);
        let out = scramble(&rho, &u).unwrap();
        let (e0, e1) = (eigendecompose(&rho).unwrap(), eigendecompose(&out).unwrap());
        for k in 0..4 {
            assert!((e0.eigenvalues[k] - e1.eigenvalues[k]).abs() < 1e-9);
        }
        assert!((concurrence(&rho) - concurrence(&out)).abs() < 1e-9);
        assert!((out.matrix().trace().re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_wave_flip_removes_bell_overlap() {
        let bell = DensityMatrix::pure(&bell_psi_plus());
        let out = scramble(&bell, &crate::optics::hwp(45f64.to_radians())).unwrap();
        assert!(fidelity_with_pure(&out, &bell_psi_plus()) < 1e-12);
    }

    #[test]
    fn non_unitary_rejected() {
        let m = JonesMatrix(Matrix2::new(re(1.0), re(0.0), re(0.0), re(0.5)));
        assert!(matches!(
            scramble(&DensityMatrix::werner(0.5), &m),
            Err(Error::NonUnitary { .. })
        ));
    }

    #[test]
    fn random_scrambler_properties() {
        assert_eq!(random_scrambler(9), random_scrambler(9));
        assert!(random_scrambler(9).unitarity_deviation() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        // E|⟨H|U|H⟩|² = 1/2 for Haar SU(2)
        let mean: f64 = (0..n)
            .map(|_| haar_su2(&mut rng).0[(0, 0)].norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }

    #[test]
    fn presets() {
        let day = scenario_preset("day-sunny-10nm").unwrap();
        let night = scenario_preset("night-clear-10nm").unwrap();
        assert!(day.noise.daylight_factor > night.noise.daylight_factor);
        assert_eq!(day.noise.filter_fwhm_nm, 10.0);
        assert_eq!(scenario_preset("day-rain-3nm").unwrap().noise.filter_fwhm_nm, 3.0);
        let err = scenario_preset("foo").unwrap_err();
        assert!(err.to_string().contains("night-clear-10nm"));
        for name in PRESET_NAMES {
            let s = scenario_preset(name).unwrap();
            assert!(DensityMatrix::new(*s.source.state().unwrap().matrix()).is_ok());
        }
    }

    #[test]
    fn background_scales_with_filter() {
        let mut n = scenario_preset("day-sunny-10nm").unwrap().noise;
        let wide = n.background_singles_rate_per_detector();
        n.filter_fwhm_nm = 3.0;
        assert!((n.background_singles_rate_per_detector() - 0.3 * wide).abs() < 1e-9 * wide);
    }

    #[test]
    fn drift_changes_state_over_day() {
        let mut s = SourceModel::new(1e6, 0.7, 0.7).unwrap();
        s.drift = Some(Drift {
            concurrence_amplitude: 0.1,
            scrambler_amplitude: 0.0,
            period_hours: 24.0,
        });
        let c6 = concurrence(&s.state_at(6.0).unwrap());
        let c18 = concurrence(&s.state_at(18.0).unwrap());
        assert!((c6 - 0.8).abs() < 1e-6 && (c18 - 0.6).abs() < 1e-6);
    }
}

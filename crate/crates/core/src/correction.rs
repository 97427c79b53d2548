//! Passive polarization compensation: from a reconstructed two-qubit state,
//! derive the measurement bases Bob must use so that his outcomes stay
//! (anti-)correlated with Alice's conventional H/V and D/A measurements, and
//! the waveplate settings that realize them.

use std::fmt::{self, Write as _};

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::optics::{pbs_projectors, solve_waveplate_angles, WaveplateSetting};
use crate::qstate::{concurrence, nearest_pure_state, DensityMatrix, PolarizationState, TwoQubitState};

/// Below this concurrence no correction is issued.
pub const REFUSE_CONCURRENCE: f64 = 0.3;
/// Below this concurrence the correction is issued with a warning.
pub const WARN_CONCURRENCE: f64 = 0.7;

/// Normalized (⟨x| ⊗ I)|ψ⟩: Bob's photon given Alice found `x`.
pub fn extract_conditional_state(
    psi: &TwoQubitState,
    x: &PolarizationState,
) -> Result<PolarizationState> {
    let a = psi.vector();
    let [x0, x1] = x.amplitudes();
    let v = Vector2::new(
        x0.conj() * a[0] + x1.conj() * a[2],
        x0.conj() * a[1] + x1.conj() * a[3],
    );
    let norm = v.norm();
    if norm <= 1e-6 {
        return Err(Error::DegenerateConditional { norm });
    }
    PolarizationState::from_vector(v)
}

#[derive(Debug, Clone)]
pub struct CorrectedBasisSet {
    pub phi_h: PolarizationState,
    /// Orthogonal complement of `phi_h`, realized by the reflected PBS port.
    pub phi_v: PolarizationState,
    pub phi_d: PolarizationState,
    /// Orthogonal complement of `phi_d`.
    pub phi_a: PolarizationState,
    pub hv_setting: WaveplateSetting,
    pub da_setting: WaveplateSetting,
    /// Top eigenvalue of the reconstructed state.
    pub source_fidelity: f64,
    pub concurrence: f64,
    pub degenerate_flag: bool,
    pub low_concurrence_warning: bool,
    /// Conditional states for Alice = V and Alice = A, as extracted directly.
    pub extracted_v: PolarizationState,
    pub extracted_a: PolarizationState,
}

impl CorrectedBasisSet {
    /// |⟨φ_H|φ_V⟩|² using the directly extracted φ_V.
    pub fn hv_overlap(&self) -> f64 {
        self.phi_h.overlap(&self.extracted_v)
    }

    pub fn da_overlap(&self) -> f64 {
        self.phi_d.overlap(&self.extracted_a)
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let vec = |p: &PolarizationState| {
            let [a, b] = p.amplitudes();
            format!(
                "({:+.6}{:+.6}j, {:+.6}{:+.6}j)",
                a.re, a.im, b.re, b.im
            )
        };
        let _ = writeln!(s, "phi_H = {}", vec(&self.phi_h));
        let _ = writeln!(s, "phi_V = {}", vec(&self.phi_v));
        let _ = writeln!(s, "phi_D = {}", vec(&self.phi_d));
        let _ = writeln!(s, "phi_A = {}", vec(&self.phi_a));
        let (h, q) = self.hv_setting.degrees();
        let _ = writeln!(s, "H/V arm (B1/B2): HWP {h:.4} deg, QWP {q:.4} deg");
        let (h, q) = self.da_setting.degrees();
        let _ = writeln!(s, "D/A arm (B3/B4): HWP {h:.4} deg, QWP {q:.4} deg");
        let _ = writeln!(s, "fidelity (nearest pure state) = {:.6}", self.source_fidelity);
        let _ = writeln!(s, "concurrence = {:.6}", self.concurrence);
        let _ = writeln!(s, "|<phi_H|phi_V extracted>|^2 = {:.6}", self.hv_overlap());
        let _ = writeln!(s, "|<phi_D|phi_A extracted>|^2 = {:.6}", self.da_overlap());
        let _ = writeln!(s, "degenerate = {}", self.degenerate_flag);
        let _ = writeln!(s, "low_concurrence_warning = {}", self.low_concurrence_warning);
        s
    }
}

impl fmt::Display for CorrectedBasisSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.report())
    }
}

pub fn derive_corrected_bases(rho: &DensityMatrix) -> Result<CorrectedBasisSet> {
    let np = nearest_pure_state(rho)?;
    if np.degenerate {
        return Err(Error::Degenerate { gap: np.gap });
    }
    let conc = concurrence(rho);
    if conc < REFUSE_CONCURRENCE {
        return Err(Error::WeakEntanglement {
            concurrence: conc,
            threshold: REFUSE_CONCURRENCE,
        });
    }
    let psi = np.state;
    let phi_h = extract_conditional_state(&psi, &PolarizationState::h())?;
    let extracted_v = extract_conditional_state(&psi, &PolarizationState::v())?;
    let phi_d = extract_conditional_state(&psi, &PolarizationState::d())?;
    let extracted_a = extract_conditional_state(&psi, &PolarizationState::a())?;

    let hv_setting = solve_waveplate_angles(&phi_h)?;
    let da_setting = solve_waveplate_angles(&phi_d)?;
    // The analyzer realizes the transmitted/reflected pair; report exactly that pair.
    let (phi_h, phi_v) = pbs_projectors(&hv_setting);
    let (phi_d, phi_a) = pbs_projectors(&da_setting);

    Ok(CorrectedBasisSet {
        phi_h,
        phi_v,
        phi_d,
        phi_a,
        hv_setting,
        da_setting,
        source_fidelity: np.fidelity,
        concurrence: conc,
        degenerate_flag: np.degenerate,
        low_concurrence_warning: conc < WARN_CONCURRENCE,
        extracted_v,
        extracted_a,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisMode {
    Conventional,
    Corrected,
}

impl BasisMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BasisMode::Conventional => "conventional",
            BasisMode::Corrected => "corrected",
        }
    }
}

impl fmt::Display for BasisMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BasisMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "conventional" => Ok(BasisMode::Conventional),
            "corrected" => Ok(BasisMode::Corrected),
            other => Err(Error::Config(format!(
                "unknown basis mode `{other}` (expected conventional or corrected)"
            ))),
        }
    }
}

/// Acceptance states of the eight detectors A1..A4 and B1..B4.
///
/// Alice always measures H, V, D, A. Each party's basis is chosen passively
/// with probability 1/2.
#[derive(Debug, Clone, Copy)]
pub struct MeasurementConfig {
    pub alice: [PolarizationState; 4],
    pub bob: [PolarizationState; 4],
}

impl MeasurementConfig {
    /// Bob B1 = V, B2 = H, B3 = D, B4 = A, so that |Ψ+⟩ gives zero error.
    pub fn conventional() -> Self {
        use PolarizationState as P;
        Self {
            alice: [P::h(), P::v(), P::d(), P::a()],
            bob: [P::v(), P::h(), P::d(), P::a()],
        }
    }

    pub fn corrected(set: &CorrectedBasisSet) -> Self {
        use PolarizationState as P;
        Self {
            alice: [P::h(), P::v(), P::d(), P::a()],
            bob: [set.phi_h, set.phi_v, set.phi_d, set.phi_a],
        }
    }

    /// Probability that a detected pair lands on (Ai, Bj), including the 1/2 × 1/2
    /// basis-choice weights. Entries sum to one.
    pub fn joint_probabilities(&self, rho: &DensityMatrix) -> [[f64; 4]; 4] {
        let mut p = [[0.0; 4]; 4];
        for (i, a) in self.alice.iter().enumerate() {
            for (j, b) in self.bob.iter().enumerate() {
                p[i][j] = 0.25 * rho.joint_probability(a, b);
            }
        }
        p
    }
}

/// Detector pairs whose coincidences are signal (same-basis, correlated).
pub const SIGNAL_PAIRS: [(usize, usize); 4] = [(0, 0), (1, 1), (2, 2), (3, 3)];
/// Same-basis pairs counted as errors.
pub const ERROR_PAIRS: [(usize, usize); 4] = [(0, 1), (1, 0), (2, 3), (3, 2)];

/// Born-rule QBER in percent over the eight sifted detector pairs.
pub fn predicted_qber(rho: &DensityMatrix, config: &MeasurementConfig) -> f64 {
    let p = config.joint_probabilities(rho);
    let err: f64 = ERROR_PAIRS.iter().map(|&(i, j)| p[i][j]).sum();
    let sig: f64 = SIGNAL_PAIRS.iter().map(|&(i, j)| p[i][j]).sum();
    if err + sig <= 0.0 {
        return 50.0;
    }
    100.0 * err / (err + sig)
}

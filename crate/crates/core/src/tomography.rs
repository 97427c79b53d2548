//! Two-qubit polarization tomography over the 36 product projections of
//! {H, V, D, A, R, L} on each side: Born-rule prediction, simulated
//! acquisition, and linear-inversion reconstruction followed by projection onto
//! the physical states.

use std::fmt::Write as _;

use nalgebra::{Matrix2, Matrix4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::qstate::{kron, re, sigma_y, DensityMatrix, PolarizationState, C64};

pub const NUM_PROJECTIONS: usize = 36;
/// Largest tolerated gap between observed and refitted group probabilities.
pub const RESIDUAL_WARN: f64 = 0.05;

const LETTERS: [char; 6] = ['H', 'V', 'D', 'A', 'R', 'L'];

fn state_for(letter: usize) -> PolarizationState {
    match letter {
        0 => PolarizationState::h(),
        1 => PolarizationState::v(),
        2 => PolarizationState::d(),
        3 => PolarizationState::a(),
        4 => PolarizationState::r(),
        _ => PolarizationState::l(),
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionPair {
    pub alice: PolarizationState,
    pub bob: PolarizationState,
    pub label: String,
    alice_letter: usize,
    bob_letter: usize,
}

impl ProjectionPair {
    fn new(a: usize, b: usize) -> Self {
        Self {
            alice: state_for(a),
            bob: state_for(b),
            label: format!("{}⊗{}", LETTERS[a], LETTERS[b]),
            alice_letter: a,
            bob_letter: b,
        }
    }

    fn from_label(label: &str) -> Result<Self> {
        let letters: Vec<char> = label.chars().filter(|ch| *ch != '⊗').collect();
        let idx = |ch: char| {
            LETTERS
                .iter()
                .position(|&l| l == ch)
                .ok_or_else(|| Error::Parse(format!("unknown projection letter `{ch}` in `{label}`")))
        };
        match letters.as_slice() {
            [a, b] => Ok(Self::new(idx(*a)?, idx(*b)?)),
            _ => Err(Error::Parse(format!("bad projection label `{label}`"))),
        }
    }

    /// Row-major index in the standard ordering.
    fn index(&self) -> usize {
        self.alice_letter * 6 + self.bob_letter
    }
}

/// The 6 × 6 product set, Alice-major, letters in H, V, D, A, R, L order.
pub fn standard_projection_set() -> Vec<ProjectionPair> {
    (0..6)
        .flat_map(|a| (0..6).map(move |b| ProjectionPair::new(a, b)))
        .collect()
}

pub fn predict_probabilities(rho: &DensityMatrix, pairs: &[ProjectionPair]) -> Vec<f64> {
    pairs
        .iter()
        .map(|p| rho.joint_probability(&p.alice, &p.bob))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TomographyRecord {
    pub pairs: Vec<ProjectionPair>,
    pub counts: Vec<u64>,
    /// Integration time per projection.
    pub acquisition_seconds: f64,
}

impl TomographyRecord {
    pub fn new(pairs: Vec<ProjectionPair>, counts: Vec<u64>, acquisition_seconds: f64) -> Result<Self> {
        if pairs.len() != counts.len() {
            return Err(Error::InvalidState(format!(
                "{} projections but {} counts",
                pairs.len(),
                counts.len()
            )));
        }
        if !(acquisition_seconds > 0.0) {
            return Err(Error::InvalidState("acquisition time must be positive".into()));
        }
        Ok(Self {
            pairs,
            counts,
            acquisition_seconds,
        })
    }

    /// `tomo-v1 <acquisition_seconds>` followed by 36 `label count` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!("tomo-v1 {}\n", self.acquisition_seconds);
        for (p, n) in self.pairs.iter().zip(&self.counts) {
            let _ = writeln!(s, "{} {}", p.label, n);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty tomography record".into()))?;
        let secs = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["tomo-v1", secs] => secs
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad acquisition time `{secs}`")))?,
            _ => return Err(Error::Parse(format!("bad tomography header `{header}`"))),
        };
        let mut pairs = Vec::new();
        let mut counts = Vec::new();
        for line in lines {
            let (label, count) = line
                .rsplit_once(char::is_whitespace)
                .ok_or_else(|| Error::Parse(format!("bad record line `{line}`")))?;
            pairs.push(ProjectionPair::from_label(label.trim())?);
            counts.push(
                count
                    .parse::<u64>()
                    .map_err(|_| Error::Parse(format!("bad count `{count}`")))?,
            );
        }
        let mut seen = [false; NUM_PROJECTIONS];
        for p in &pairs {
            if std::mem::replace(&mut seen[p.index()], true) {
                return Err(Error::Parse(format!("duplicate projection {}", p.label)));
            }
        }
        Self::new(pairs, counts, secs)
    }
}

/// Poisson counts with mean `pair_rate × seconds × p_k` per projection.
pub fn simulate_tomography(
    rho: &DensityMatrix,
    pair_rate: f64,
    seconds_per_projection: f64,
    seed: u64,
) -> Result<TomographyRecord> {
    if !(pair_rate > 0.0) {
        return Err(Error::InvalidState("pair rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = standard_projection_set();
    let counts = predict_probabilities(rho, &pairs)
        .into_iter()
        .map(|p| poisson(&mut rng, pair_rate * seconds_per_projection * p))
        .collect();
    TomographyRecord::new(pairs, counts, seconds_per_projection)
}

pub(crate) fn poisson<R: rand::Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub state: DensityMatrix,
    /// Max |observed − refitted| over group-normalized probabilities.
    pub max_residual: f64,
    pub residual_warning: bool,
}

fn pauli(k: usize) -> Matrix2<C64> {
    match k {
        0 => Matrix2::identity(),
        1 => Matrix2::new(re(1.0), re(0.0), re(0.0), re(-1.0)),
        2 => Matrix2::new(re(0.0), re(1.0), re(1.0), re(0.0)),
        _ => sigma_y(),
    }
}

/// Linear inversion over the nine basis pairings, then eigenvalue clipping.
///
/// Within each Alice-basis × Bob-basis group the four counts are normalized
/// by their total, so differing integration times per group do not bias the
/// estimate. Bases are indexed Z (H/V), X (D/A), Y (R/L).
pub fn reconstruct(record: &TomographyRecord) -> Result<Reconstruction> {
    if record.counts.iter().all(|&n| n == 0) {
        return Err(Error::InsufficientData("all tomography counts are zero".into()));
    }
    // group[basis_a][basis_b][sign_a][sign_b]
    let mut group = [[[[0.0f64; 2]; 2]; 3]; 3];
    let mut present = [[0u8; 3]; 3];
    for (p, &n) in record.pairs.iter().zip(&record.counts) {
        let (ba, sa) = (p.alice_letter / 2, p.alice_letter % 2);
        let (bb, sb) = (p.bob_letter / 2, p.bob_letter % 2);
        group[ba][bb][sa][sb] += n as f64;
        present[ba][bb] += 1;
    }
    let mut probs = group;
    for ba in 0..3 {
        for bb in 0..3 {
            if present[ba][bb] != 4 {
                return Err(Error::InsufficientData(format!(
                    "basis pairing ({ba}, {bb}) has {} of 4 projections",
                    present[ba][bb]
                )));
            }
            let total: f64 = group[ba][bb].iter().flatten().sum();
            if total <= 0.0 {
                return Err(Error::InsufficientData(format!(
                    "basis pairing ({ba}, {bb}) recorded no counts"
                )));
            }
            for sa in 0..2 {
                for sb in 0..2 {
                    probs[ba][bb][sa][sb] = group[ba][bb][sa][sb] / total;
                }
            }
        }
    }

    let sign = |s: usize| if s == 0 { 1.0 } else { -1.0 };
    // Correlation tensor T[μ][ν] = Tr(ρ σμ⊗σν) with μ, ν in (I, Z, X, Y).
    let mut t = [[0.0f64; 4]; 4];
    t[0][0] = 1.0;
    for ba in 0..3 {
        for bb in 0..3 {
            let p = &probs[ba][bb];
            let mut corr = 0.0;
            let mut a_marg = 0.0;
            let mut b_marg = 0.0;
            for sa in 0..2 {
                for sb in 0..2 {
                    corr += sign(sa) * sign(sb) * p[sa][sb];
                    a_marg += sign(sa) * p[sa][sb];
                    b_marg += sign(sb) * p[sa][sb];
                }
            }
            t[ba + 1][bb + 1] = corr;
            t[ba + 1][0] += a_marg / 3.0;
            t[0][bb + 1] += b_marg / 3.0;
        }
    }
    let mut m = Matrix4::<C64>::zeros();
    for (mu, row) in t.iter().enumerate() {
        for (nu, &v) in row.iter().enumerate() {
            m += kron(&pauli(mu), &pauli(nu)).scale(0.25 * v);
        }
    }
    let state = DensityMatrix::project_physical(&m)?;

    let refit = predict_probabilities(&state, &record.pairs);
    let mut max_residual: f64 = 0.0;
    for (p, q) in record.pairs.iter().zip(&refit) {
        let (ba, sa) = (p.alice_letter / 2, p.alice_letter % 2);
        let (bb, sb) = (p.bob_letter / 2, p.bob_letter % 2);
        max_residual = max_residual.max((probs[ba][bb][sa][sb] - q).abs());
    }
    Ok(Reconstruction {
        state,
        max_residual,
        residual_warning: max_residual > RESIDUAL_WARN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{bell_psi_plus, fidelity_with_pure};

    fn exact_record(rho: &DensityMatrix, scale: f64) -> TomographyRecord {
        let pairs = standard_projection_set();
        let counts = predict_probabilities(rho, &pairs)
            .iter()
            .map(|p| (p * scale).round() as u64)
            .collect();
        TomographyRecord::new(pairs, counts, 1.0).unwrap()
    }

    #[test]
    fn projection_set_shape() {
        let set = standard_projection_set();
        assert_eq!(set.len(), 36);
        assert_eq!(set[0].label, "H⊗H");
        assert_eq!(set[5].label, "H⊗L");
        assert_eq!(set[35].label, "L⊗L");
        for p in &set {
            assert!((p.alice.vector().norm() - 1.0).abs() < 1e-12);
            assert!((p.bob.vector().norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bell_probabilities() {
        let rho = DensityMatrix::pure(&bell_psi_plus());
        let set = standard_projection_set();
        let p = predict_probabilities(&rho, &set);
        assert!((p[1] - 0.5).abs() < 1e-12); // H⊗V
        assert!(p[0].abs() < 1e-12); // H⊗H
        assert!((p[2 * 6 + 2] - 0.5).abs() < 1e-12); // D⊗D
    }

    #[test]
    fn groups_normalize() {
        let rho = DensityMatrix::werner(0.6);
        let set = standard_projection_set();
        let p = predict_probabilities(&rho, &set);
        for ba in 0..3 {
            for bb in 0..3 {
                let s: f64 = (0..2)
                    .flat_map(|sa| (0..2).map(move |sb| (2 * ba + sa) * 6 + 2 * bb + sb))
                    .map(|k| p[k])
                    .sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_probability_projections_get_zero_counts() {
        let rho = DensityMatrix::pure(&bell_psi_plus());
        let rec = simulate_tomography(&rho, 1e4, 1.0, 3).unwrap();
        assert_eq!(rec.counts[0], 0);
        assert_eq!(rec.counts[7], 0); // V⊗V
    }

    #[test]
    fn simulation_is_deterministic() {
        let rho = DensityMatrix::werner(0.8);
        let a = simulate_tomography(&rho, 1e4, 1.0, 11).unwrap();
        let b = simulate_tomography(&rho, 1e4, 1.0, 11).unwrap();
        assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn mean_count_matches_poisson() {
        let rho = DensityMatrix::pure(&bell_psi_plus());
        let n = 100;
        let mean: f64 = (0..n)
            .map(|s| simulate_tomography(&rho, 1e4, 1.0, s).unwrap().counts[1] as f64)
            .sum::<f64>()
            / n as f64;
        // mean 5000, σ of the sample mean √5000/10 ≈ 7.1
        assert!((mean - 5000.0).abs() < 3.0 * (5000f64).sqrt() / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn reconstruct_exact_bell_and_mixed() {
        let rec = exact_record(&DensityMatrix::pure(&bell_psi_plus()), 1e6);
        let r = reconstruct(&rec).unwrap();
        assert!(fidelity_with_pure(&r.state, &bell_psi_plus()) >= 0.999);
        assert!(!r.residual_warning);

        let mixed = DensityMatrix::maximally_mixed();
        let r = reconstruct(&exact_record(&mixed, 1e6)).unwrap();
        assert!(r.state.max_abs_diff(&mixed) < 1e-3);
    }

    #[test]
    fn reconstruct_poisson_werner() {
        let truth = DensityMatrix::werner(0.9);
        for seed in 0..20 {
            let rec = simulate_tomography(&truth, 1e5, 1.0, seed).unwrap();
            let r = reconstruct(&rec).unwrap();
            // true overlap with Ψ+ is 0.925
            let f = fidelity_with_pure(&r.state, &bell_psi_plus());
            assert!((f - 0.925).abs() < 0.01, "seed {seed}: {f}");
            assert!(r.state.max_abs_diff(&truth) < 0.01);
        }
    }

    #[test]
    fn reconstruct_rejects_empty() {
        let rec = TomographyRecord::new(standard_projection_set(), vec![0; 36], 1.0).unwrap();
        assert!(matches!(reconstruct(&rec), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn record_text_round_trip() {
        let rec = simulate_tomography(&DensityMatrix::werner(0.8), 1e3, 2.5, 1).unwrap();
        let text = rec.to_text();
        assert!(text.starts_with("tomo-v1 2.5\n"));
        assert_eq!(text.lines().count(), 37);
        let back = TomographyRecord::from_text(&text).unwrap();
        assert_eq!(back.counts, rec.counts);
        assert_eq!(back.acquisition_seconds, 2.5);
        assert!(TomographyRecord::from_text("tomo-v2 1\n").is_err());
    }
}

//! Single- and two-qubit polarization states, density matrices and the metrics
//! computed on them: eigendecomposition, nearest pure state, fidelity against a
//! pure reference, purity and concurrence.
//!
//! The two-qubit basis is ordered (HH, HV, VH, VV) with Alice's photon as the
//! first tensor factor.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Complex, Matrix2, Matrix4, SymmetricEigen, Vector2, Vector4};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

pub const NORM_TOL: f64 = 1e-12;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-9;
/// Minimum gap between the two largest eigenvalues for the nearest pure state to be meaningful.
pub const DEGENERACY_GAP: f64 = 1e-6;

pub(crate) const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[inline]
pub(crate) fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

#[inline]
pub(crate) fn re(x: f64) -> C64 {
    Complex::new(x, 0.0)
}

/// Normalized single-photon polarization (Jones) vector. Equality is up to global phase.
#[derive(Debug, Clone, Copy)]
pub struct PolarizationState(Vector2<C64>);

impl PolarizationState {
    /// Builds a state from unnormalized amplitudes.
    pub fn new(h: C64, v: C64) -> Result<Self> {
        Self::from_vector(Vector2::new(h, v))
    }

    pub fn from_vector(v: Vector2<C64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidState(format!(
                "polarization vector has norm {n:e}"
            )));
        }
        Ok(Self(v.unscale(n)))
    }

    pub fn h() -> Self {
        Self(Vector2::new(re(1.0), re(0.0)))
    }

    pub fn v() -> Self {
        Self(Vector2::new(re(0.0), re(1.0)))
    }

    pub fn d() -> Self {
        Self(Vector2::new(re(FRAC_1_SQRT_2), re(FRAC_1_SQRT_2)))
    }

    pub fn a() -> Self {
        Self(Vector2::new(re(FRAC_1_SQRT_2), re(-FRAC_1_SQRT_2)))
    }

    pub fn r() -> Self {
        Self(Vector2::new(re(FRAC_1_SQRT_2), c(0.0, FRAC_1_SQRT_2)))
    }

    pub fn l() -> Self {
        Self(Vector2::new(re(FRAC_1_SQRT_2), c(0.0, -FRAC_1_SQRT_2)))
    }

    pub fn vector(&self) -> &Vector2<C64> {
        &self.0
    }

    pub fn amplitudes(&self) -> [C64; 2] {
        [self.0[0], self.0[1]]
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &Self) -> C64 {
        self.0.dotc(&other.0)
    }

    /// |⟨self|other⟩|²
    pub fn overlap(&self, other: &Self) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn same_up_to_phase(&self, other: &Self, tol: f64) -> bool {
        self.overlap(other) >= 1.0 - tol
    }

    /// The orthogonal complement (−b*, a*).
    pub fn orthogonal(&self) -> Self {
        Self(Vector2::new(-self.0[1].conj(), self.0[0].conj()))
    }

    /// Stokes coordinates (S1, S2, S3) with S3 > 0 for R = (H + iV)/√2.
    pub fn bloch(&self) -> [f64; 3] {
        let a = self.0[0];
        let b = self.0[1];
        let ab = a.conj() * b;
        [a.norm_sqr() - b.norm_sqr(), 2.0 * ab.re, 2.0 * ab.im]
    }

    pub fn projector(&self) -> Matrix2<C64> {
        self.0 * self.0.adjoint()
    }
}

impl PartialEq for PolarizationState {
    fn eq(&self, other: &Self) -> bool {
        self.same_up_to_phase(other, 1e-12)
    }
}

/// Normalized two-qubit pure state, basis (HH, HV, VH, VV).
#[derive(Debug, Clone, Copy)]
pub struct TwoQubitState(Vector4<C64>);

impl TwoQubitState {
    pub fn new(amplitudes: [C64; 4]) -> Result<Self> {
        Self::from_vector(Vector4::from(amplitudes))
    }

    pub fn from_vector(v: Vector4<C64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::InvalidState(format!(
                "two-qubit vector has norm {n:e}"
            )));
        }
        Ok(Self(v.unscale(n)))
    }

    pub fn product(a: &PolarizationState, b: &PolarizationState) -> Self {
        let (x, y) = (a.vector(), b.vector());
        Self(Vector4::new(x[0] * y[0], x[0] * y[1], x[1] * y[0], x[1] * y[1]))
    }

    pub fn vector(&self) -> &Vector4<C64> {
        &self.0
    }

    pub fn amplitudes(&self) -> [C64; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.0.dotc(&other.0)
    }

    pub fn overlap(&self, other: &Self) -> f64 {
        self.inner(other).norm_sqr()
    }

    /// (U_a ⊗ U_b)|ψ⟩
    pub fn apply_local(&self, ua: &Matrix2<C64>, ub: &Matrix2<C64>) -> Self {
        let v = kron(ua, ub) * self.0;
        Self::from_vector(v).expect("local unitary preserves norm")
    }

    /// Multiplies by a global phase so the largest-magnitude amplitude is real and positive.
    pub fn canonical_phase(&self) -> Self {
        let (idx, _) = self
            .0
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, z)| {
                if z.norm() > acc.1 + 1e-12 {
                    (i, z.norm())
                } else {
                    acc
                }
            });
        let z = self.0[idx];
        let phase = z.conj() / z.norm();
        Self(self.0.map(|a| a * phase))
    }
}

impl PartialEq for TwoQubitState {
    fn eq(&self, other: &Self) -> bool {
        self.overlap(other) >= 1.0 - 1e-12
    }
}

/// (|HV⟩ + |VH⟩)/√2
pub fn bell_psi_plus() -> TwoQubitState {
    TwoQubitState(Vector4::new(
        re(0.0),
        re(FRAC_1_SQRT_2),
        re(FRAC_1_SQRT_2),
        re(0.0),
    ))
}

/// (|HV⟩ − |VH⟩)/√2
pub fn bell_psi_minus() -> TwoQubitState {
    TwoQubitState(Vector4::new(
        re(0.0),
        re(FRAC_1_SQRT_2),
        re(-FRAC_1_SQRT_2),
        re(0.0),
    ))
}

pub fn kron(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    Matrix4::from_fn(|i, j| a[(i / 2, j / 2)] * b[(i % 2, j % 2)])
}

fn max_abs(m: &Matrix4<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Two-qubit density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, Copy)]
pub struct DensityMatrix(Matrix4<C64>);

impl DensityMatrix {
    /// Validates a raw matrix against the density-matrix invariants.
    pub fn new(m: Matrix4<C64>) -> Result<Self> {
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite entry".into()));
        }
        let herm = max_abs(&(m - m.adjoint()));
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (max deviation {herm:.3e})"
            )));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let eig = SymmetricEigen::new(hermitize(&m));
        let min = eig.eigenvalues.min();
        if min < -PSD_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min:.3e}"
            )));
        }
        Ok(Self(m))
    }

    /// Maps an arbitrary matrix onto the physical set: Hermitian part, negative
    /// eigenvalues clipped to zero, trace renormalized to one.
    pub fn project_physical(m: &Matrix4<C64>) -> Result<Self> {
        let h = hermitize(m);
        let eig = SymmetricEigen::new(h);
        let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidState(
                "no positive spectral weight to project onto".into(),
            ));
        }
        let mut out = Matrix4::zeros();
        for (k, &l) in clipped.iter().enumerate() {
            if l > 0.0 {
                let v = eig.eigenvectors.column(k);
                out += (v * v.adjoint()).scale(l / total);
            }
        }
        Ok(Self(hermitize(&out)))
    }

    pub fn pure(psi: &TwoQubitState) -> Self {
        Self(hermitize(&(psi.vector() * psi.vector().adjoint())))
    }

    pub fn maximally_mixed() -> Self {
        Self(Matrix4::identity().scale(0.25).map(|x: C64| x))
    }

    /// p·|Ψ+⟩⟨Ψ+| + (1 − p)·I/4
    pub fn werner(p: f64) -> Self {
        Self::pure(&bell_psi_plus()).mix(&Self::maximally_mixed(), p)
    }

    /// weight·self + (1 − weight)·other
    pub fn mix(&self, other: &Self, weight: f64) -> Self {
        Self(self.0.scale(weight) + other.0.scale(1.0 - weight))
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.0
    }

    /// (U_a ⊗ U_b) ρ (U_a ⊗ U_b)†
    pub fn conjugate_local(&self, ua: &Matrix2<C64>, ub: &Matrix2<C64>) -> Self {
        let u = kron(ua, ub);
        Self(hermitize(&(u * self.0 * u.adjoint())))
    }

    /// Tr(ρ · op), real part.
    pub fn expectation(&self, op: &Matrix4<C64>) -> f64 {
        (self.0 * op).trace().re
    }

    /// Tr(ρ · Π_a ⊗ Π_b)
    pub fn joint_probability(&self, a: &PolarizationState, b: &PolarizationState) -> f64 {
        let psi = TwoQubitState::product(a, b);
        (psi.vector().adjoint() * self.0 * psi.vector())[(0, 0)]
            .re
            .clamp(0.0, 1.0)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        max_abs(&(self.0 - other.0))
    }

    /// 4 lines of 4 entries `re+imj`, 12 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in 0..4 {
            let row: Vec<String> = (0..4).map(|j| format_complex(self.0[(i, j)])).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        if rows.len() != 4 {
            return Err(Error::Parse(format!(
                "density matrix needs 4 rows, found {}",
                rows.len()
            )));
        }
        let mut m = Matrix4::zeros();
        for (i, row) in rows.iter().enumerate() {
            let entries: Vec<&str> = row.split_whitespace().collect();
            if entries.len() != 4 {
                return Err(Error::Parse(format!(
                    "row {} has {} entries, expected 4",
                    i + 1,
                    entries.len()
                )));
            }
            for (j, e) in entries.iter().enumerate() {
                m[(i, j)] = parse_complex(e)?;
            }
        }
        Self::new(m)
    }
}

impl fmt::Display for DensityMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for DensityMatrix {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::from_text(s)
    }
}

fn hermitize(m: &Matrix4<C64>) -> Matrix4<C64> {
    (m + m.adjoint()).scale(0.5)
}

fn format_complex(z: C64) -> String {
    let sign = if z.im.is_sign_negative() && z.im != 0.0 { '-' } else { '+' };
    format!("{:.11e}{}{:.11e}j", z.re, sign, z.im.abs())
}

pub(crate) fn parse_complex(s: &str) -> Result<C64> {
    let body = s
        .strip_suffix('j')
        .ok_or_else(|| Error::Parse(format!("complex entry `{s}` must end in `j`")))?;
    let bytes = body.as_bytes();
    // Split at the last sign that is neither leading nor part of an exponent.
    let split = (1..bytes.len())
        .rev()
        .find(|&i| {
            (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E')
        })
        .ok_or_else(|| Error::Parse(format!("complex entry `{s}` lacks an imaginary part")))?;
    let (r, i) = body.split_at(split);
    let re: f64 = r
        .parse()
        .map_err(|_| Error::Parse(format!("bad real part in `{s}`")))?;
    let im: f64 = i
        .parse()
        .map_err(|_| Error::Parse(format!("bad imaginary part in `{s}`")))?;
    Ok(c(re, im))
}

#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Descending.
    pub eigenvalues: [f64; 4],
    pub eigenvectors: [TwoQubitState; 4],
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> Matrix4<C64> {
        self.eigenvalues
            .iter()
            .zip(self.eigenvectors.iter())
            .fold(Matrix4::zeros(), |acc, (&l, v)| {
                acc + (v.vector() * v.vector().adjoint()).scale(l)
            })
    }
}

/// Eigendecomposition of a Hermitian 4×4 matrix, eigenvalues sorted descending.
pub fn eigendecompose_hermitian(m: &Matrix4<C64>) -> Result<EigenDecomposition> {
    let herm = max_abs(&(m - m.adjoint()));
    if herm > HERMITIAN_TOL {
        return Err(Error::InvalidState(format!(
            "not Hermitian (max deviation {herm:.3e})"
        )));
    }
    let eig = SymmetricEigen::new(hermitize(m));
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = [0, 1, 2, 3].map(|k| eig.eigenvalues[order[k]]);
    let eigenvectors = [0, 1, 2, 3].map(|k| {
        TwoQubitState::from_vector(eig.eigenvectors.column(order[k]).into_owned())
            .expect("eigenvectors are unit norm")
            .canonical_phase()
    });
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

pub fn eigendecompose(rho: &DensityMatrix) -> Result<EigenDecomposition> {
    eigendecompose_hermitian(rho.matrix())
}

#[derive(Debug, Clone)]
pub struct NearestPure {
    pub state: TwoQubitState,
    /// ⟨λ_max|ρ|λ_max⟩
    pub fidelity: f64,
    /// λ_1 − λ_2
    pub gap: f64,
    pub degenerate: bool,
}

/// The eigenvector belonging to the largest eigenvalue, with its overlap on ρ.
pub fn nearest_pure_state(rho: &DensityMatrix) -> Result<NearestPure> {
    let eig = eigendecompose(rho)?;
    let state = eig.eigenvectors[0];
    let gap = eig.eigenvalues[0] - eig.eigenvalues[1];
    Ok(NearestPure {
        fidelity: fidelity_with_pure(rho, &state),
        state,
        gap,
        degenerate: gap < DEGENERACY_GAP,
    })
}

/// ⟨ψ|ρ|ψ⟩, clamped to [0, 1].
pub fn fidelity_with_pure(rho: &DensityMatrix, psi: &TwoQubitState) -> f64 {
    let v = psi.vector();
    (v.adjoint() * rho.matrix() * v)[(0, 0)].re.clamp(0.0, 1.0)
}

pub fn purity(rho: &DensityMatrix) -> f64 {
    (rho.matrix() * rho.matrix()).trace().re
}

pub fn sigma_y() -> Matrix2<C64> {
    Matrix2::new(re(0.0), c(0.0, -1.0), c(0.0, 1.0), re(0.0))
}

/// Wootters concurrence max(0, √μ1 − √μ2 − √μ3 − √μ4), with μ the eigenvalues of
/// ρ·ρ̃ and ρ̃ = (σy⊗σy)ρ*(σy⊗σy). The μ are obtained from the Hermitian similar
/// matrix √ρ ρ̃ √ρ.
pub fn concurrence(rho: &DensityMatrix) -> f64 {
    let yy = kron(&sigma_y(), &sigma_y());
    let tilde = yy * rho.matrix().conjugate() * yy;
    let eig = SymmetricEigen::new(hermitize(rho.matrix()));
    let mut sqrt_rho = Matrix4::zeros();
    for k in 0..4 {
        let l = eig.eigenvalues[k].max(0.0);
        if l > 0.0 {
            let v = eig.eigenvectors.column(k);
            sqrt_rho += (v * v.adjoint()).scale(l.sqrt());
        }
    }
    let r = hermitize(&(sqrt_rho * tilde * sqrt_rho));
    let mut mu: Vec<f64> = SymmetricEigen::new(r)
        .eigenvalues
        .iter()
        .map(|&m| m.max(0.0).sqrt())
        .collect();
    mu.sort_by(|a, b| b.total_cmp(a));
    (mu[0] - mu[1] - mu[2] - mu[3]).clamp(0.0, 1.0)
}

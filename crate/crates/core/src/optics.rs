//! Jones calculus for the analyzer optics: half- and quarter-wave plates, the
//! polarizing beam splitter, and the inverse problem of finding plate angles
//! that map |H⟩ onto a requested polarization.
//!
//! Angles are measured counterclockwise from the horizontal to the fast axis.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::ops::Mul;

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::qstate::{c, re, PolarizationState, C64};

/// Overlap the waveplate solver must reach.
pub const SOLVER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesMatrix(pub Matrix2<C64>);

impl JonesMatrix {
    pub fn identity() -> Self {
        Self(Matrix2::identity())
    }

    pub fn matrix(&self) -> &Matrix2<C64> {
        &self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    /// max |J†J − I|
    pub fn unitarity_deviation(&self) -> f64 {
        (self.0.adjoint() * self.0 - Matrix2::identity())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Rotation of the polarization plane by `theta`.
    pub fn rotator(theta: f64) -> Self {
        let (s, co) = theta.sin_cos();
        Self(Matrix2::new(re(co), re(-s), re(s), re(co)))
    }
}

impl Mul for JonesMatrix {
    type Output = JonesMatrix;
    fn mul(self, rhs: JonesMatrix) -> JonesMatrix {
        JonesMatrix(self.0 * rhs.0)
    }
}

/// [[cos2α, sin2α], [sin2α, −cos2α]]
pub fn hwp(alpha: f64) -> JonesMatrix {
    let (s, co) = (2.0 * alpha).sin_cos();
    JonesMatrix(Matrix2::new(re(co), re(s), re(s), re(-co)))
}

/// [[cos²β + i sin²β, (1 − i) sinβ cosβ], [(1 − i) sinβ cosβ, sin²β + i cos²β]]
pub fn qwp(beta: f64) -> JonesMatrix {
    let (s, co) = beta.sin_cos();
    let off = c(1.0, -1.0) * (s * co);
    JonesMatrix(Matrix2::new(
        c(co * co, s * s),
        off,
        off,
        c(s * s, co * co),
    ))
}

/// Matrix-vector product, renormalized.
pub fn apply(j: &JonesMatrix, s: &PolarizationState) -> PolarizationState {
    PolarizationState::from_vector(j.0 * s.vector())
        .expect("Jones matrix annihilated the state; only unitary elements are supported")
}

fn normalize_angle(x: f64) -> f64 {
    let r = x.rem_euclid(PI);
    if r >= PI - 1e-13 {
        0.0
    } else {
        r
    }
}

/// HWP angle α and QWP angle β of one analyzer arm, radians in [0, π).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveplateSetting {
    pub hwp_angle: f64,
    pub qwp_angle: f64,
}

impl WaveplateSetting {
    pub fn new(hwp_angle: f64, qwp_angle: f64) -> Self {
        Self {
            hwp_angle: normalize_angle(hwp_angle),
            qwp_angle: normalize_angle(qwp_angle),
        }
    }

    pub fn from_degrees(hwp_deg: f64, qwp_deg: f64) -> Self {
        Self::new(hwp_deg.to_radians(), qwp_deg.to_radians())
    }

    /// QWP(β)·HWP(α)
    pub fn jones(&self) -> JonesMatrix {
        qwp(self.qwp_angle) * hwp(self.hwp_angle)
    }

    /// QWP(β)·HWP(α)|H⟩
    pub fn projection(&self) -> PolarizationState {
        apply(&self.jones(), &PolarizationState::h())
    }

    pub fn degrees(&self) -> (f64, f64) {
        (self.hwp_angle.to_degrees(), self.qwp_angle.to_degrees())
    }
}

impl fmt::Display for WaveplateSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (h, q) = self.degrees();
        write!(f, "HWP {h:.4} deg, QWP {q:.4} deg")
    }
}

fn forward_overlap(target: &PolarizationState, setting: &WaveplateSetting) -> f64 {
    target.overlap(&setting.projection())
}

/// Finds (α′, β′) with QWP(β′)·HWP(α′)|H⟩ equal to `target` up to phase.
///
/// The closed form reads the target's azimuth ψ and ellipticity χ off its
/// Stokes vector: the HWP rotates |H⟩ to linear polarization at ψ ± χ and the
/// QWP, fast axis at ψ, turns that into the ellipse. All sign and branch
/// variants are tried; among those reaching the tolerance the one with the
/// smallest α′² + β′² is returned. A bounded simplex refinement covers the case
/// where no closed-form candidate reaches the tolerance.
pub fn solve_waveplate_angles(target: &PolarizationState) -> Result<WaveplateSetting> {
    let [s1, s2, s3] = target.bloch();
    let azimuth = 0.5 * s2.atan2(s1);
    let ellipticity = 0.5 * s3.clamp(-1.0, 1.0).asin();

    let mut candidates = Vec::with_capacity(16);
    for beta in [azimuth, azimuth + FRAC_PI_2] {
        for theta in [
            azimuth + ellipticity,
            azimuth - ellipticity,
            azimuth + FRAC_PI_2 + ellipticity,
            azimuth + FRAC_PI_2 - ellipticity,
        ] {
            for alpha in [0.5 * theta, 0.5 * theta + FRAC_PI_2] {
                let s = WaveplateSetting::new(alpha, beta);
                candidates.push((forward_overlap(target, &s), s));
            }
        }
    }

    let passing = candidates
        .iter()
        .filter(|(ov, _)| *ov >= 1.0 - 1e-12)
        .map(|(_, s)| *s)
        .min_by(|a, b| {
            let ka = a.hwp_angle.powi(2) + a.qwp_angle.powi(2);
            let kb = b.hwp_angle.powi(2) + b.qwp_angle.powi(2);
            ka.total_cmp(&kb)
        });
    if let Some(s) = passing {
        return Ok(s);
    }

    let (best_ov, best) = candidates
        .iter()
        .copied()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("candidate list is non-empty");
    let (ov, refined) = refine(target, best, best_ov);
    if ov >= 1.0 - SOLVER_TOL {
        Ok(refined)
    } else {
        Err(Error::NonConvergence {
            best_residual: 1.0 - ov,
        })
    }
}

/// Nelder–Mead on 1 − overlap over (α, β), bounded iteration count.
fn refine(
    target: &PolarizationState,
    start: WaveplateSetting,
    start_ov: f64,
) -> (f64, WaveplateSetting) {
    let cost = |p: [f64; 2]| 1.0 - forward_overlap(target, &WaveplateSetting::new(p[0], p[1]));
    let x0 = [start.hwp_angle, start.qwp_angle];
    let mut simplex = [x0, [x0[0] + 0.05, x0[1]], [x0[0], x0[1] + 0.05]];
    let mut f = simplex.map(cost);
    for _ in 0..2000 {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| f[a].total_cmp(&f[b]));
        simplex = idx.map(|i| simplex[i]);
        f = idx.map(|i| f[i]);
        if f[0] < 1e-15 {
            break;
        }
        let centroid = [
            0.5 * (simplex[0][0] + simplex[1][0]),
            0.5 * (simplex[0][1] + simplex[1][1]),
        ];
        let along = |t: f64| {
            [
                centroid[0] + t * (simplex[2][0] - centroid[0]),
                centroid[1] + t * (simplex[2][1] - centroid[1]),
            ]
        };
        let xr = along(-1.0);
        let fr = cost(xr);
        if fr < f[0] {
            let xe = along(-2.0);
            let fe = cost(xe);
            if fe < fr {
                simplex[2] = xe;
                f[2] = fe;
            } else {
                simplex[2] = xr;
                f[2] = fr;
            }
        } else if fr < f[1] {
            simplex[2] = xr;
            f[2] = fr;
        } else {
            let xc = along(0.5);
            let fc = cost(xc);
            if fc < f[2] {
                simplex[2] = xc;
                f[2] = fc;
            } else {
                for k in 1..3 {
                    simplex[k] = [
                        0.5 * (simplex[0][0] + simplex[k][0]),
                        0.5 * (simplex[0][1] + simplex[k][1]),
                    ];
                    f[k] = cost(simplex[k]);
                }
            }
        }
    }
    let (k, fbest) = f
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    if 1.0 - fbest > start_ov {
        (1.0 - fbest, WaveplateSetting::new(simplex[k][0], simplex[k][1]))
    } else {
        (start_ov, start)
    }
}

/// Acceptance states of the PBS output ports for an analyzer arm:
/// transmitted = QWP(β)HWP(α)|H⟩, reflected = QWP(β)HWP(α)|V⟩.
pub fn pbs_projectors(setting: &WaveplateSetting) -> (PolarizationState, PolarizationState) {
    let j = setting.jones();
    (
        apply(&j, &PolarizationState::h()),
        apply(&j, &PolarizationState::v()),
    )
}

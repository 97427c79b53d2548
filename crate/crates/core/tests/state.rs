use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qkdsim_core::channel::{build_source_state, feasible_fidelity_range, haar_su2, scramble};
use qkdsim_core::correction::{derive_corrected_bases, predicted_qber, MeasurementConfig};
use qkdsim_core::optics::{pbs_projectors, solve_waveplate_angles, WaveplateSetting};
use qkdsim_core::qstate::{bell_psi_plus, concurrence, eigendecompose, fidelity_with_pure, DensityMatrix};
use qkdsim_core::tomography::{reconstruct, simulate_tomography, TomographyRecord};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn source_family_hits_targets(conc in 0.3f64..1.0, t in 0.0f64..1.0) {
        let (lo, hi) = feasible_fidelity_range(conc);
        let f = lo + t * (hi - lo);
        let rho = build_source_state(f, conc).unwrap();
        prop_assert!(DensityMatrix::new(*rho.matrix()).is_ok());
        prop_assert!((fidelity_with_pure(&rho, &bell_psi_plus()) - f).abs() < 1e-9);
        prop_assert!((concurrence(&rho) - conc).abs() < 1e-9);
    }

    #[test]
    fn scrambling_keeps_spectrum_and_correction_restores_qber(seed in any::<u64>(), conc in 0.75f64..1.0) {
        let rho = build_source_state((1.0 + conc) / 2.0, conc).unwrap();
        let u = haar_su2(&mut ChaCha8Rng::seed_from_u64(seed));
        let s = scramble(&rho, &u).unwrap();
        let (e0, e1) = (eigendecompose(&rho).unwrap(), eigendecompose(&s).unwrap());
        for k in 0..4 {
            prop_assert!((e0.eigenvalues[k] - e1.eigenvalues[k]).abs() < 1e-9);
        }
        let set = derive_corrected_bases(&s).unwrap();
        let q = predicted_qber(&s, &MeasurementConfig::corrected(&set));
        let w = (2.0 * conc + 1.0) / 3.0;
        prop_assert!((q - 50.0 * (1.0 - w)).abs() < 1e-6);
    }

    #[test]
    fn solved_plates_reproduce_target(h in 0.0f64..180.0, q in 0.0f64..180.0) {
        let target = WaveplateSetting::from_degrees(h, q).projection();
        let s = solve_waveplate_angles(&target).unwrap();
        let (t, r) = pbs_projectors(&s);
        prop_assert!(t.overlap(&target) > 1.0 - 1e-9);
        prop_assert!(r.overlap(&target) < 1e-9);
    }
}

#[test]
fn tomography_record_survives_text() {
    let rho = build_source_state(0.6, 0.8).unwrap();
    let rec = simulate_tomography(&rho, 2e4, 2.0, 12).unwrap();
    let back = TomographyRecord::from_text(&rec.to_text()).unwrap();
    assert_eq!(back.counts, rec.counts);
    let a = reconstruct(&rec).unwrap();
    let b = reconstruct(&back).unwrap();
    assert!(a.state.max_abs_diff(&b.state) < 1e-15);
    assert!(a.state.max_abs_diff(&rho) < 0.02);
}

#[test]
fn density_matrix_text_round_trip() {
    let rho = scramble(&build_source_state(0.7, 0.72).unwrap(), &haar_su2(&mut ChaCha8Rng::seed_from_u64(1))).unwrap();
    let back = DensityMatrix::from_text(&rho.to_text()).unwrap();
    assert!(back.max_abs_diff(&rho) < 1e-10);
}

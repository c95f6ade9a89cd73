use fdmr_core::floquet::{bulk_bands, bulk_floquet, chern_number, floquet_operator_signed, SIGN};
use fdmr_core::lattice::{build_bulk_step, build_finite_geometry, build_ribbon_step, build_supercell_step, theta_98};
use fdmr_core::linalg::{unitarity_residual, unitary_eigen, wrap_phase, TWO_PI};
use fdmr_core::transport::{perturb, steady_state, DisorderSpec};
use fdmr_core::{LatticeParams, PhaseDefect, PortConfig, RingSite, StepHamiltonian, Sublattice};
use proptest::prelude::*;

fn params() -> LatticeParams {
    LatticeParams { theta_a: theta_98(), ..LatticeParams::default() }
}

fn sorted_phases(p: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = p.iter().map(|&x| wrap_phase(x)).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Matches two eigenphase sets modulo 2 pi.
fn same_phases(a: &[f64], b: &[f64], tol: f64) -> bool {
    let mut used = vec![false; b.len()];
    a.iter().all(|&x| {
        let hit = b.iter().enumerate().find(|(i, &y)| {
            let d = wrap_phase(x - y).abs();
            !used[*i] && d.min(TWO_PI - d) < tol
        });
        match hit {
            Some((i, _)) => {
                used[i] = true;
                true
            }
            None => false,
        }
    })
}

fn bulk_steps(p: &LatticeParams, k: [f64; 2]) -> Vec<StepHamiltonian> {
    (1..=4).map(|j| build_bulk_step(p, j, k).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bloch_periodicity(kx in -0.2f64..0.2, ky in -0.2f64..0.2, sx in -2i32..=2, sy in -2i32..=2) {
        let p = params();
        let g = TWO_PI / p.lattice_constant_um;
        let a = bulk_floquet(&p, [kx, ky]).unwrap();
        let b = bulk_floquet(&p, [kx + sx as f64 * g, ky + sy as f64 * g]).unwrap();
        prop_assert!((a - b).norm() < 1e-10);
    }

    #[test]
    fn floquet_operator_is_unitary(theta in 0.0f64..1.5707, kx in -0.1f64..0.1, ky in -0.1f64..0.1) {
        let p = LatticeParams { theta_a: theta, ..params() };
        let u = bulk_floquet(&p, [kx, ky]).unwrap();
        prop_assert!(unitarity_residual(&u) < 1e-12);
    }

    #[test]
    fn sign_flip_negates_spectrum(theta in 0.2f64..1.5707, kx in -0.1f64..0.1, ky in -0.1f64..0.1) {
        // U_+(k) is the complex conjugate of U_-(-k).
        let p = LatticeParams { theta_a: theta, ..params() };
        let l = p.ring_length_um;
        let plus = unitary_eigen(&floquet_operator_signed(&bulk_steps(&p, [kx, ky]), l, -SIGN).unwrap()).unwrap();
        let minus = unitary_eigen(&floquet_operator_signed(&bulk_steps(&p, [-kx, -ky]), l, SIGN).unwrap()).unwrap();
        let neg: Vec<f64> = minus.phases.iter().map(|x| -x).collect();
        prop_assert!(same_phases(&plus.phases, &neg, 1e-9), "{:?} vs {:?}", sorted_phases(&plus.phases), sorted_phases(&neg));
    }

    #[test]
    fn step_hamiltonians_are_hermitian(j in 1u8..=4, kx in -0.3f64..0.3, ky in -0.3f64..0.3, dphi in 0.0f64..12.5) {
        let mut p = params();
        prop_assert!(build_bulk_step(&p, j, [kx, ky]).unwrap().hermitian_residual() < 1e-12);
        prop_assert!(build_ribbon_step(&p, j, kx, 4).unwrap().hermitian_residual() < 1e-12);
        p.nx = 3;
        p.ny = 3;
        let d = PhaseDefect::canonical(1, 1, dphi);
        prop_assert!(build_supercell_step(&p, j, [kx, ky], Some(&d)).unwrap().hermitian_residual() < 1e-12);
    }

    #[test]
    fn zero_detuning_defect_is_no_defect(m in 0usize..4, n in 0usize..4, j in 1u8..=4, kx in -0.05f64..0.05) {
        let mut p = params();
        p.nx = 4;
        p.ny = 4;
        let d = PhaseDefect::canonical(m, n, 0.0);
        let a = build_supercell_step(&p, j, [kx, 0.0], Some(&d)).unwrap();
        let b = build_supercell_step(&p, j, [kx, 0.0], None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn lossless_lattice_conserves_power(
        nx in 1usize..4, ny in 1usize..4, theta in 0.3f64..1.5, lam in 1540.0f64..1550.0, dphi in 0.0f64..12.5,
    ) {
        let p = LatticeParams { theta_a: theta, loss_db_per_cm: 0.0, nx, ny, ..params() };
        let d = PhaseDefect::canonical(0, 0, dphi);
        let g = build_finite_geometry(&p, Some(&d), &PortConfig::standard(nx)).unwrap();
        let s = steady_state(&g, lam).unwrap();
        prop_assert!((s.exit_power() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn lossy_transmission_is_bounded(nx in 1usize..4, ny in 1usize..4, loss in 0.1f64..30.0, lam in 1540.0f64..1550.0) {
        let p = LatticeParams { loss_db_per_cm: loss, nx, ny, ..params() };
        let g = build_finite_geometry(&p, None, &PortConfig::standard(nx)).unwrap();
        let s = steady_state(&g, lam).unwrap();
        let t = s.t_out.norm_sqr();
        prop_assert!((0.0..=1.0).contains(&t));
        prop_assert!(s.exit_power() < 1.0);
    }

    #[test]
    fn disorder_draw_depends_only_on_seed_and_trial(seed in any::<u64>(), trial in 0u64..1000) {
        let mut p = params();
        p.nx = 3;
        p.ny = 3;
        let g = build_finite_geometry(&p, None, &PortConfig::standard(3)).unwrap();
        let spec = DisorderSpec { sigma_coupling: 0.2, sigma_phase: 0.2, region: None, trials: 1, seed };
        let region: Vec<usize> = (0..g.ring_count()).collect();
        prop_assert_eq!(perturb(&g, &region, &spec, trial), perturb(&g, &region, &spec, trial));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn chern_numbers_sum_to_zero(theta in 1.3f64..1.5) {
        let p = LatticeParams { theta_a: theta, ..params() };
        let bands = bulk_bands(&p, 16).unwrap();
        let cherns: Vec<i64> = (0..3).map(|b| chern_number(&bands, b).unwrap()).collect();
        prop_assert_eq!(cherns.iter().sum::<i64>(), 0);
    }
}

#[test]
fn defect_ring_site_round_trip() {
    let s = RingSite::new(5, 0, Sublattice::B);
    assert_eq!(RingSite::from_index(s.index(10), 10), s);
}

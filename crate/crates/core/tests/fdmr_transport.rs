//! The transport solver and the supercell Floquet analysis must agree on
//! where the defect loop resonates.

use std::f64::consts::PI;

use fdmr_core::floquet::fdmr::{fdmr_point, loop_rings, FdmrOptions, LoopFamily};
use fdmr_core::floquet::bulk_bands;
use fdmr_core::lattice::theta_98;
use fdmr_core::linalg::wrap_phase;
use fdmr_core::transport::loop_resonances;
use fdmr_core::{build_finite_geometry, LatticeParams, PhaseDefect, PortConfig, RingSite, Sublattice};

#[test]
fn loop_resonances_match_defect_quasienergies() {
    let p = LatticeParams { theta_a: theta_98(), ..LatticeParams::default() };
    let dphi = 1.47 * PI;
    let opts = FdmrOptions::default();
    let gaps = bulk_bands(&p, opts.bulk_grid).unwrap().gaps(1e-3);
    let point = fdmr_point(&p, dphi, &opts, &gaps).unwrap();
    let upper: Vec<f64> = point.bands.iter().filter(|b| b.family == LoopFamily::Upper).map(|b| b.quasienergy).collect();
    assert_eq!(upper.len(), 3, "{:?}", point.bands);

    let site = RingSite::new(5, 0, Sublattice::B);
    let geom = build_finite_geometry(&p, Some(&PhaseDefect::canonical(5, 0, dphi)), &PortConfig::standard(p.nx)).unwrap();
    let core = loop_rings(site, LoopFamily::Upper, geom.nx, geom.ny);
    let fsr = p.dispersion.fsr_nm(1545.0, p.ring_length_um);
    let res = loop_resonances(&geom, &core, 1545.0 - 0.6 * fsr, 1545.0 + 0.6 * fsr, 1201, 0.1).unwrap();
    assert!(res.len() >= 3, "{res:?}");
    for r in &res {
        let phase = wrap_phase(p.dispersion.beta(r.lambda0_nm) * p.ring_length_um);
        let nearest = upper.iter().map(|e| wrap_phase(phase - e).abs()).fold(f64::INFINITY, f64::min);
        // Finite-lattice edge coupling pulls the loop mode slightly.
        assert!(nearest < 0.06, "resonance at {} nm (phase {phase}) vs {upper:?}", r.lambda0_nm);
    }
    let spacing = (res.last().unwrap().lambda0_nm - res[0].lambda0_nm) / (res.len() - 1) as f64;
    assert!((spacing / (fsr / 3.0) - 1.0).abs() < 0.02, "spacing {spacing} vs {}", fsr / 3.0);
}

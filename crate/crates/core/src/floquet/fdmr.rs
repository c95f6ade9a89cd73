//! Defect-mode flat bands in a phase-detuned supercell.
//!
//! Detuning one B ring lifts the compact loop states that pass through it out
//! of the bulk flat band. Two eight-ring loops contain a given B ring: the
//! `Upper` loop, which extends from the defect row to the row above, and the
//! `Lower` loop, which extends to the row below. A B ring on the bottom edge of
//! a finite lattice supports only the `Upper` loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bulk_bands, floquet_from, Gap};
use crate::error::{Error, Result};
use crate::lattice::{build_supercell_step, LatticeParams, PhaseDefect, RingSite, Sublattice};
use crate::linalg::{phase_from, unitary_eigen, wrap_phase, CMatrix, TWO_PI};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopFamily {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdmrOptions {
    pub supercell_nx: usize,
    pub supercell_ny: usize,
    /// Defect ring and detuned steps; its `delta_phi` is replaced per sweep point.
    pub defect: PhaseDefect,
    /// Supercell momenta sampled for flatness (1 to 4).
    pub k_points: usize,
    /// Maximum quasienergy spread over the sampled momenta (rad).
    pub flat_tol: f64,
    /// States closer than this to a gap edge are not counted as in-gap (rad).
    pub gap_margin: f64,
    /// Bulk grid used to locate the gaps.
    pub bulk_grid: usize,
}

impl Default for FdmrOptions {
    fn default() -> Self {
        Self {
            supercell_nx: 10,
            supercell_ny: 10,
            defect: PhaseDefect::canonical(5, 0, 0.0),
            k_points: 2,
            flat_tol: 1e-4 * TWO_PI,
            gap_margin: 1e-3,
            bulk_grid: 61,
        }
    }
}

/// One in-gap flat defect band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectBand {
    /// Quasienergy `eps L` (rad) at the first sampled momentum.
    pub quasienergy: f64,
    /// Spread over the sampled momenta (rad).
    pub spread: f64,
    pub gap_id: usize,
    /// Fraction of the gap measured from its short-wavelength (upper) edge.
    pub fraction_from_short_edge: f64,
    pub ipr: f64,
    pub family: LoopFamily,
    /// Weight on the family loop rings and their nearest neighbours.
    pub loop_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdmrPoint {
    pub delta_phi: f64,
    pub bands: Vec<DefectBand>,
}

/// Rings of the loop through the defect B ring at cell `(m, n)`.
pub fn loop_rings(site: RingSite, family: LoopFamily, nx: usize, ny: usize) -> Vec<usize> {
    let (m, n) = (site.m as isize, site.n as isize);
    // Loop based at cell (p, q): A(p,q) B(p,q) A(p+1,q) C(p+1,q-1)
    // A(p+1,q-1) B(p,q-1) A(p,q-1) C(p,q-1).
    let (p, q) = match family {
        LoopFamily::Upper => (m, n + 1),
        LoopFamily::Lower => (m, n),
    };
    let cells = [
        (p, q, Sublattice::A),
        (p, q, Sublattice::B),
        (p + 1, q, Sublattice::A),
        (p + 1, q - 1, Sublattice::C),
        (p + 1, q - 1, Sublattice::A),
        (p, q - 1, Sublattice::B),
        (p, q - 1, Sublattice::A),
        (p, q - 1, Sublattice::C),
    ];
    cells
        .iter()
        .map(|&(a, b, s)| {
            let mm = a.rem_euclid(nx as isize) as usize;
            let nn = b.rem_euclid(ny as isize) as usize;
            RingSite::new(mm, nn, s).index(nx)
        })
        .collect()
}

/// Coupling partners of a ring in a periodic supercell.
pub fn supercell_neighbors(ring: usize, nx: usize, ny: usize) -> Vec<usize> {
    let s = RingSite::from_index(ring, nx);
    let (m, n) = (s.m as isize, s.n as isize);
    let at = |a: isize, b: isize, sub: Sublattice| {
        RingSite::new(a.rem_euclid(nx as isize) as usize, b.rem_euclid(ny as isize) as usize, sub).index(nx)
    };
    let mut v = match s.sublattice {
        Sublattice::A => vec![
            at(m, n, Sublattice::B),
            at(m, n, Sublattice::C),
            at(m - 1, n, Sublattice::B),
            at(m, n - 1, Sublattice::C),
        ],
        Sublattice::B => vec![at(m, n, Sublattice::A), at(m + 1, n, Sublattice::A)],
        Sublattice::C => vec![at(m, n, Sublattice::A), at(m, n + 1, Sublattice::A)],
    };
    v.sort_unstable();
    v.dedup();
    v
}

fn with_neighbors(rings: &[usize], nx: usize, ny: usize) -> Vec<usize> {
    let mut v: Vec<usize> = rings.to_vec();
    for &r in rings {
        v.extend(supercell_neighbors(r, nx, ny));
    }
    v.sort_unstable();
    v.dedup();
    v
}

/// Defect bands at one detune, given the bulk gaps of the lattice.
pub fn fdmr_point(params: &LatticeParams, delta_phi: f64, opts: &FdmrOptions, gaps: &[Gap]) -> Result<FdmrPoint> {
    let (nx, ny) = (opts.supercell_nx, opts.supercell_ny);
    if nx < 1 || ny < 1 {
        return Err(Error::InvalidParameter("supercell must be at least 1x1".into()));
    }
    if !(1..=4).contains(&opts.k_points) {
        return Err(Error::InvalidParameter("k_points must be 1..=4".into()));
    }
    let sc = LatticeParams { nx, ny, ..params.clone() };
    let defect = PhaseDefect { delta_phi, ..opts.defect.clone() };
    defect.site.check(nx, ny)?;
    let pi = std::f64::consts::PI;
    let (gx, gy) = (pi / (nx as f64 * sc.lattice_constant_um), pi / (ny as f64 * sc.lattice_constant_um));
    let ks = [[0.0, 0.0], [gx, gy], [gx, 0.0], [0.0, gy]];
    let eigs = ks[..opts.k_points]
        .iter()
        .map(|&k| {
            let u = floquet_from(sc.ring_length_um, |j| build_supercell_step(&sc, j, k, Some(&defect)))?;
            unitary_eigen(&u)
        })
        .collect::<Result<Vec<_>>>()?;

    let loops = [LoopFamily::Upper, LoopFamily::Lower].map(|f| {
        let core = loop_rings(defect.site, f, nx, ny);
        let wide = with_neighbors(&core, nx, ny);
        (f, core, wide)
    });
    let first = &eigs[0];
    let mut bands = Vec::new();
    for (s, &eps) in first.phases.iter().enumerate() {
        let Some(gap) = gaps.iter().find(|g| g.contains(eps, opts.gap_margin)) else {
            continue;
        };
        let mut spread = 0.0_f64;
        for other in &eigs[1..] {
            let d = other.phases.iter().map(|&e| wrap_phase(e - eps).abs()).fold(f64::INFINITY, f64::min);
            spread = spread.max(d);
        }
        if spread > opts.flat_tol {
            continue;
        }
        let dens: Vec<f64> = first.vectors.column(s).iter().map(|z| z.norm_sqr()).collect();
        let total: f64 = dens.iter().sum();
        let ipr = dens.iter().map(|d| d * d).sum::<f64>() / (total * total);
        let weight = |rings: &[usize]| rings.iter().map(|&r| dens[r]).sum::<f64>() / total;
        let (family, _, wide) = loops
            .iter()
            .max_by(|a, b| weight(&a.1).partial_cmp(&weight(&b.1)).unwrap())
            .unwrap();
        let offset = phase_from(eps, gap.lower);
        bands.push(DefectBand {
            quasienergy: eps,
            spread,
            gap_id: gap.id,
            fraction_from_short_edge: (gap.width - offset) / gap.width,
            ipr,
            family: *family,
            loop_weight: weight(wide),
        });
    }
    if bands.is_empty() {
        return Err(Error::NoDefectState(delta_phi));
    }
    bands.sort_by(|a, b| a.quasienergy.partial_cmp(&b.quasienergy).unwrap());
    Ok(FdmrPoint { delta_phi, bands })
}

/// Sweeps the detune; bulk gaps are computed once from `params`.
pub fn fdmr_sweep(params: &LatticeParams, delta_phis: &[f64], opts: &FdmrOptions) -> Result<Vec<Result<FdmrPoint>>> {
    params.validate()?;
    for &d in delta_phis {
        if !(0.0..2.0 * TWO_PI).contains(&d) {
            return Err(Error::InvalidParameter(format!("delta_phi = {d} outside [0, 4 pi)")));
        }
    }
    let gaps = bulk_bands(params, opts.bulk_grid)?.gaps(1e-6);
    Ok(delta_phis.par_iter().map(|&d| fdmr_point(params, d, opts, &gaps)).collect())
}

/// Picks the band of one family in one gap at each sweep point.
pub fn track_branch(points: &[Result<FdmrPoint>], gap_id: usize, family: LoopFamily) -> Vec<(f64, Option<DefectBand>)> {
    points
        .iter()
        .filter_map(|p| p.as_ref().ok())
        .map(|p| {
            let b = p.bands.iter().find(|b| b.gap_id == gap_id && b.family == family).cloned();
            (p.delta_phi, b)
        })
        .collect()
}

/// Dense supercell Floquet operator, exposed for diagnostics and benches.
pub fn supercell_floquet(params: &LatticeParams, k: [f64; 2], defect: Option<&PhaseDefect>) -> Result<CMatrix> {
    floquet_from(params.ring_length_um, |j| build_supercell_step(params, j, k, defect))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::theta_98;

    fn small_opts() -> FdmrOptions {
        FdmrOptions { supercell_nx: 6, supercell_ny: 6, defect: PhaseDefect::canonical(3, 0, 0.0), ..FdmrOptions::default() }
    }

    fn params() -> LatticeParams {
        LatticeParams { theta_a: theta_98(), ..LatticeParams::default() }
    }

    #[test]
    fn loop_is_closed_chain_of_couplers() {
        let (nx, ny) = (6, 6);
        for fam in [LoopFamily::Upper, LoopFamily::Lower] {
            let r = loop_rings(RingSite::new(3, 2, Sublattice::B), fam, nx, ny);
            assert_eq!(r.len(), 8);
            for i in 0..8 {
                let (a, b) = (r[i], r[(i + 1) % 8]);
                assert!(supercell_neighbors(a, nx, ny).contains(&b), "{fam:?} link {i}");
            }
            assert!(r.contains(&RingSite::new(3, 2, Sublattice::B).index(nx)));
        }
    }

    #[test]
    fn no_defect_state_without_detune() {
        let p = params();
        let gaps = bulk_bands(&p, 31).unwrap().gaps(1e-6);
        assert_eq!(fdmr_point(&p, 0.0, &small_opts(), &gaps).unwrap_err(), Error::NoDefectState(0.0));
    }

    #[test]
    fn detuned_loop_states_are_flat_and_localized() {
        let p = params();
        let gaps = bulk_bands(&p, 31).unwrap().gaps(1e-6);
        let pt = fdmr_point(&p, 1.5 * std::f64::consts::PI, &small_opts(), &gaps).unwrap();
        let upper: Vec<_> = pt.bands.iter().filter(|b| b.family == LoopFamily::Upper).collect();
        let lower: Vec<_> = pt.bands.iter().filter(|b| b.family == LoopFamily::Lower).collect();
        assert_eq!(upper.len(), 3, "{pt:?}");
        assert!(!lower.is_empty());
        for b in &pt.bands {
            assert!(b.spread <= 1e-4 * TWO_PI);
            assert!(b.loop_weight >= 0.8, "{b:?}");
        }
    }
}

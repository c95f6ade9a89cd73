//! Projected spectra of a strip that is periodic along x and has `ny` cells
//! between hard walls along y.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bulk_bands, bulk_floquet, floquet_from, periodic_grid, sort_by_cut, FloquetSpectrum, Gap, StateLabel};
use crate::error::{Error, Result};
use crate::lattice::{build_ribbon_step, LatticeParams};
use crate::linalg::{phase_from, unitary_eigen, wrap_phase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RibbonOptions {
    pub nkx: usize,
    pub ny: usize,
    /// Minimum weight in the outermost cell for an edge label.
    pub edge_threshold: f64,
    /// Bulk grid used to locate the gaps.
    pub bulk_grid: usize,
    /// ky samples for the projected bulk bands at each kx.
    pub projection_ky: usize,
}

impl Default for RibbonOptions {
    fn default() -> Self {
        Self { nkx: 201, ny: 10, edge_threshold: 0.6, bulk_grid: 101, projection_ky: 101 }
    }
}

/// Ribbon spectrum with edge labels and per-gap edge-branch diagnostics.
#[derive(Debug, Clone)]
pub struct RibbonSpectrum {
    pub spectrum: FloquetSpectrum,
    pub ny: usize,
    pub gaps: Vec<Gap>,
    /// Per gap, `[bottom, top]` number of edge branches crossing mid-gap.
    pub crossings: Vec<[usize; 2]>,
    /// Per gap, `[bottom, top]` net crossing direction (sign of d eps / d kx).
    pub chirality: Vec<[i32; 2]>,
    /// Per gap, `[bottom, top]` count of edge-labelled in-gap states.
    pub edge_states: Vec<[usize; 2]>,
    /// Largest boundary weight among states inside the projected dispersive
    /// bulk bands.
    pub max_bulk_boundary_weight: f64,
    /// Number of states inside the projected dispersive bulk bands.
    pub bulk_state_count: usize,
}

/// Weight of a state in the bottom and top unit cells.
pub fn boundary_weights(v: &[f64], ny: usize) -> (f64, f64) {
    let total: f64 = v.iter().sum();
    let bottom: f64 = v[..3].iter().sum();
    let top: f64 = v[3 * (ny - 1)..3 * ny].iter().sum();
    (bottom / total, top / total)
}

pub fn ribbon_spectrum(params: &LatticeParams, opts: &RibbonOptions) -> Result<RibbonSpectrum> {
    params.validate()?;
    if opts.ny < 2 {
        return Err(Error::InvalidParameter(format!("ribbon needs ny >= 2, got {}", opts.ny)));
    }
    if opts.nkx < 3 {
        return Err(Error::InvalidParameter("ribbon needs at least 3 kx points".into()));
    }
    let bulk = bulk_bands(params, opts.bulk_grid)?;
    let gaps = bulk.gaps(1e-6);
    let cut = bulk.branch_cut;
    let ny = opts.ny;
    let lam = params.lattice_constant_um;
    let kxs = periodic_grid(opts.nkx, lam);
    let kys = periodic_grid(opts.projection_ky, lam);
    let flat_bands: Vec<bool> = bulk.band_ranges().iter().map(|r| r.1 - r.0 < 1e-8).collect();

    struct Column {
        q: Vec<f64>,
        v: crate::linalg::CMatrix,
        labels: Vec<StateLabel>,
        weight: Vec<f64>,
        bulk_max: f64,
        bulk_count: usize,
    }

    let columns = kxs
        .par_iter()
        .map(|&kx| -> Result<Column> {
            let u = floquet_from(params.ring_length_um, |j| build_ribbon_step(params, j, kx, ny))?;
            let e = unitary_eigen(&u)?;
            let (q, v) = sort_by_cut(&e.phases, &e.vectors, cut);
            // Projected bulk bands at this kx.
            let mut proj = vec![(f64::INFINITY, f64::NEG_INFINITY); 3];
            for &ky in &kys {
                let eb = unitary_eigen(&bulk_floquet(params, [kx, ky])?)?;
                let (qb, _) = sort_by_cut(&eb.phases, &eb.vectors, cut);
                for b in 0..3 {
                    let x = phase_from(qb[b], cut);
                    proj[b].0 = proj[b].0.min(x);
                    proj[b].1 = proj[b].1.max(x);
                }
            }
            let mut labels = Vec::with_capacity(q.len());
            let mut weight = Vec::with_capacity(q.len());
            let mut bulk_max = 0.0_f64;
            let mut bulk_count = 0;
            for s in 0..q.len() {
                let dens: Vec<f64> = v.column(s).iter().map(|z| z.norm_sqr()).collect();
                let (wb, wt) = boundary_weights(&dens, ny);
                let label = if wb >= opts.edge_threshold {
                    StateLabel::EdgeBottom
                } else if wt >= opts.edge_threshold {
                    StateLabel::EdgeTop
                } else {
                    StateLabel::Bulk
                };
                let w = wb.max(wt);
                let x = phase_from(q[s], cut);
                let in_dispersive = (0..3).any(|b| !flat_bands[b] && x >= proj[b].0 - 1e-9 && x <= proj[b].1 + 1e-9);
                let on_flat = (0..3).any(|b| flat_bands[b] && (x - proj[b].0).abs() < 1e-6);
                if in_dispersive && !on_flat {
                    bulk_max = bulk_max.max(w);
                    bulk_count += 1;
                }
                labels.push(label);
                weight.push(w);
            }
            Ok(Column { q, v, labels, weight, bulk_max, bulk_count })
        })
        .collect::<Result<Vec<_>>>()?;

    let ng = gaps.len();
    let mut crossings = vec![[0usize; 2]; ng];
    let mut chirality = vec![[0i32; 2]; ng];
    let mut edge_states = vec![[0usize; 2]; ng];
    let nk = columns.len();
    for (gi, g) in gaps.iter().enumerate() {
        let mid = g.center();
        let half = 0.5 * g.width;
        for (side, label) in [StateLabel::EdgeBottom, StateLabel::EdgeTop].into_iter().enumerate() {
            let offsets: Vec<Vec<f64>> = columns
                .iter()
                .map(|c| {
                    c.q.iter()
                        .zip(&c.labels)
                        .filter(|(_, l)| **l == label)
                        .map(|(e, _)| wrap_phase(e - mid))
                        .filter(|s| s.abs() < half)
                        .collect()
                })
                .collect();
            edge_states[gi][side] = offsets.iter().map(|o| o.len()).sum();
            for i in 0..nk {
                let next = &offsets[(i + 1) % nk];
                for &a in &offsets[i] {
                    for &b in next {
                        if a * b < 0.0 && (a - b).abs() < 0.5 {
                            crossings[gi][side] += 1;
                            chirality[gi][side] += if b > a { 1 } else { -1 };
                        }
                    }
                }
            }
        }
    }

    let max_bulk = columns.iter().fold(0.0_f64, |m, c| m.max(c.bulk_max));
    let bulk_state_count = columns.iter().map(|c| c.bulk_count).sum();
    let k_grid = kxs.iter().map(|&kx| [kx, 0.0]).collect();
    let mut spectrum = FloquetSpectrum {
        k_grid,
        grid_shape: (opts.nkx, 1),
        branch_cut: cut,
        quasienergies: Vec::with_capacity(nk),
        eigenvectors: Vec::with_capacity(nk),
        labels: Vec::with_capacity(nk),
        boundary_weight: Vec::with_capacity(nk),
    };
    for c in columns {
        spectrum.quasienergies.push(c.q);
        spectrum.eigenvectors.push(c.v);
        spectrum.labels.push(c.labels);
        spectrum.boundary_weight.push(c.weight);
    }
    Ok(RibbonSpectrum {
        spectrum,
        ny,
        gaps,
        crossings,
        chirality,
        edge_states,
        max_bulk_boundary_weight: max_bulk,
        bulk_state_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::theta_98;

    fn quick(theta: f64, ny: usize) -> RibbonSpectrum {
        let p = LatticeParams { theta_a: theta, ..LatticeParams::default() };
        let opts = RibbonOptions { nkx: 61, ny, edge_threshold: 0.6, bulk_grid: 31, projection_ky: 41 };
        ribbon_spectrum(&p, &opts).unwrap()
    }

    #[test]
    fn anomalous_ribbon_has_edge_branches_everywhere() {
        let r = quick(theta_98(), 10);
        assert_eq!(r.gaps.len(), 3);
        for g in 0..3 {
            assert_eq!(r.crossings[g], [1, 1], "gap {g}: {:?}", r.crossings);
            // Opposite boundaries carry opposite chirality.
            assert_eq!(r.chirality[g][0], -r.chirality[g][1]);
        }
        assert!(r.max_bulk_boundary_weight < 0.6);
    }

    #[test]
    fn weak_coupling_lacks_edge_branches_somewhere() {
        let r = quick(0.3, 10);
        assert!(r.crossings.iter().any(|c| c[0] == 0 || c[1] == 0), "{:?}", r.crossings);
    }

    #[test]
    fn wide_ribbon_interior_states_match_bulk() {
        let p = LatticeParams { theta_a: theta_98(), ..LatticeParams::default() };
        let opts = RibbonOptions { nkx: 9, ny: 20, edge_threshold: 0.6, bulk_grid: 31, projection_ky: 401 };
        let r = ribbon_spectrum(&p, &opts).unwrap();
        let tol = 1e-3 * crate::linalg::TWO_PI;
        for (ik, k) in r.spectrum.k_grid.iter().enumerate() {
            let kys = periodic_grid(opts.projection_ky, p.lattice_constant_um);
            let mut bulk = vec![];
            for &ky in &kys {
                bulk.extend(unitary_eigen(&bulk_floquet(&p, [k[0], ky]).unwrap()).unwrap().phases);
            }
            for (s, &e) in r.spectrum.quasienergies[ik].iter().enumerate() {
                if r.spectrum.labels[ik][s] != StateLabel::Bulk {
                    continue;
                }
                if r.gaps.iter().any(|g| g.contains(e, tol)) {
                    continue;
                }
                let d = bulk.iter().map(|b| wrap_phase(b - e).abs()).fold(f64::INFINITY, f64::min);
                if d < tol {
                    continue;
                }
                // Off the bulk spectrum only on a weakly confined edge branch.
                let dens: Vec<f64> = r.spectrum.eigenvectors[ik].column(s).iter().map(|z| z.norm_sqr()).collect();
                let outer: f64 = dens[..9].iter().chain(&dens[dens.len() - 9..]).sum();
                assert!(outer > 0.5, "state {e} at kx index {ik} is {d} from bulk, outer weight {outer}");
            }
        }
    }
}

//! Floquet operators, quasienergy spectra, gaps and topological diagnostics.
//!
//! Step propagators are `U_j = exp(s i H_j L / 4)` with the global sign
//! `s = SIGN = -1`, and quasienergies are the eigenphases `eps L = arg(lambda)`
//! of `U_F = U_4 U_3 U_2 U_1`, reported in (-pi, pi]. In this convention a
//! localized mode with quasienergy `eps` resonates where `beta(lambda) L = eps L
//! mod 2 pi`, so larger `eps` means shorter wavelength.

pub mod chern;
pub mod fdmr;
pub mod ribbon;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{build_bulk_step, LatticeParams, StepHamiltonian};
use crate::linalg::{expm_hermitian, phase_from, unitary_eigen, wrap_phase, CMatrix, PairOperator, TWO_PI};

pub use chern::{chern_number, fhs_chern};
pub use fdmr::{fdmr_point, fdmr_sweep, track_branch, DefectBand, FdmrOptions, FdmrPoint, LoopFamily};
pub use ribbon::{ribbon_spectrum, RibbonOptions, RibbonSpectrum};

/// Global exponent sign of the step propagators.
pub const SIGN: f64 = -1.0;

/// Classification of a Floquet eigenstate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateLabel {
    Bulk,
    EdgeBottom,
    EdgeTop,
    Defect,
}

impl StateLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StateLabel::Bulk => "bulk",
            StateLabel::EdgeBottom => "edge-bottom",
            StateLabel::EdgeTop => "edge-top",
            StateLabel::Defect => "defect",
        }
    }
}

/// Quasienergies and eigenvectors over a momentum grid.
#[derive(Debug, Clone)]
pub struct FloquetSpectrum {
    pub k_grid: Vec<[f64; 2]>,
    /// Points per axis; the grid index is `ix * shape.1 + iy`.
    pub grid_shape: (usize, usize),
    /// Band ordering runs counter-clockwise from this phase.
    pub branch_cut: f64,
    /// Per-k quasienergies `eps L` in (-pi, pi], in band order.
    pub quasienergies: Vec<Vec<f64>>,
    /// Per-k eigenvectors as columns, in band order.
    pub eigenvectors: Vec<CMatrix>,
    pub labels: Vec<Vec<StateLabel>>,
    pub boundary_weight: Vec<Vec<f64>>,
}

impl FloquetSpectrum {
    pub fn band_count(&self) -> usize {
        self.quasienergies.first().map_or(0, |q| q.len())
    }

    /// Counter-clockwise distance from the branch cut, in [0, 2 pi).
    pub fn relative(&self, eps: f64) -> f64 {
        phase_from(eps, self.branch_cut)
    }

    /// Extent `[min, max]` of each band measured from the branch cut.
    pub fn band_ranges(&self) -> Vec<(f64, f64)> {
        let nb = self.band_count();
        let mut r = vec![(f64::INFINITY, f64::NEG_INFINITY); nb];
        for q in &self.quasienergies {
            for (b, &e) in q.iter().enumerate() {
                let x = self.relative(e);
                r[b].0 = r[b].0.min(x);
                r[b].1 = r[b].1.max(x);
            }
        }
        r
    }

    /// Open quasienergy gaps, sorted by centre in (-pi, pi].
    pub fn gaps(&self, min_width: f64) -> Vec<Gap> {
        let ranges = self.band_ranges();
        let nb = ranges.len();
        let mut out = Vec::new();
        for b in 0..nb {
            let lo = ranges[b].1;
            let hi = if b + 1 < nb { ranges[b + 1].0 } else { ranges[0].0 + TWO_PI };
            let width = hi - lo;
            if width > min_width {
                let lower = wrap_phase(self.branch_cut + lo);
                out.push(Gap { id: 0, lower, width, band_below: b, band_above: (b + 1) % nb });
            }
        }
        out.sort_by(|a, b| wrap_phase(a.center()).partial_cmp(&wrap_phase(b.center())).unwrap());
        for (i, g) in out.iter_mut().enumerate() {
            g.id = i;
        }
        out
    }

    /// Largest spread of any band over the grid (rad).
    pub fn flattest_band(&self) -> (usize, f64) {
        self.band_ranges()
            .iter()
            .enumerate()
            .map(|(b, r)| (b, r.1 - r.0))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    }
}

/// Open quasienergy gap `[lower, lower + width]` (rad, `lower` in (-pi, pi]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    /// 0, 1, 2 for gaps I, II, III in ascending order of centre.
    pub id: usize,
    pub lower: f64,
    pub width: f64,
    pub band_below: usize,
    pub band_above: usize,
}

impl Gap {
    pub fn upper(&self) -> f64 {
        self.lower + self.width
    }

    pub fn center(&self) -> f64 {
        self.lower + 0.5 * self.width
    }

    /// Distance of `eps` above the lower edge, or `None` outside the gap.
    pub fn offset(&self, eps: f64) -> Option<f64> {
        let x = phase_from(eps, self.lower);
        if x < self.width {
            Some(x)
        } else {
            None
        }
    }

    pub fn contains(&self, eps: f64, margin: f64) -> bool {
        matches!(self.offset(eps), Some(x) if x > margin && x < self.width - margin)
    }

    pub fn roman(&self) -> &'static str {
        ["I", "II", "III", "IV", "V", "VI"].get(self.id).copied().unwrap_or("?")
    }
}

/// Composes `U_4 U_3 U_2 U_1` with `U_j = exp(sign i H_j L / 4)`.
pub fn floquet_operator_signed(steps: &[StepHamiltonian], l: f64, sign: f64) -> Result<CMatrix> {
    if steps.len() != 4 {
        return Err(Error::DimensionMismatch(format!("expected 4 steps, got {}", steps.len())));
    }
    let n = steps[0].dim();
    for (i, s) in steps.iter().enumerate() {
        if s.dim() != n || s.matrix.ncols() != n {
            return Err(Error::DimensionMismatch(format!("step {} has dimension {}", i + 1, s.dim())));
        }
        if s.hermitian_residual() > 1e-12 {
            return Err(Error::InvalidParameter(format!("step {} is not Hermitian", i + 1)));
        }
    }
    let c = sign * l / 4.0;
    let mut u = CMatrix::identity(n, n);
    for s in steps {
        u = match PairOperator::exp_of(&s.matrix, c) {
            Some(op) => op.left_mul(&u),
            None => expm_hermitian(&s.matrix, c) * u,
        };
    }
    Ok(u)
}

/// Floquet operator with the module-wide sign convention.
pub fn floquet_operator(steps: &[StepHamiltonian], l: f64) -> Result<CMatrix> {
    floquet_operator_signed(steps, l, SIGN)
}

/// Builds the four steps with `build` and returns the Floquet operator.
pub fn floquet_from<F>(l: f64, mut build: F) -> Result<CMatrix>
where
    F: FnMut(u8) -> Result<StepHamiltonian>,
{
    let steps = (1..=4u8).map(&mut build).collect::<Result<Vec<_>>>()?;
    floquet_operator(&steps, l)
}

/// Bulk Floquet operator at momentum `k`.
pub fn bulk_floquet(params: &LatticeParams, k: [f64; 2]) -> Result<CMatrix> {
    floquet_from(params.ring_length_um, |j| build_bulk_step(params, j, k))
}

/// Eigenphases and eigenvectors sorted counter-clockwise from `cut`.
pub fn sorted_eigen(u: &CMatrix, cut: f64) -> Result<(Vec<f64>, CMatrix)> {
    let e = unitary_eigen(u)?;
    Ok(sort_by_cut(&e.phases, &e.vectors, cut))
}

pub(crate) fn sort_by_cut(phases: &[f64], vectors: &CMatrix, cut: f64) -> (Vec<f64>, CMatrix) {
    let mut order: Vec<usize> = (0..phases.len()).collect();
    order.sort_by(|&a, &b| {
        phase_from(phases[a], cut).partial_cmp(&phase_from(phases[b], cut)).unwrap()
    });
    let q: Vec<f64> = order.iter().map(|&i| phases[i]).collect();
    let v = CMatrix::from_fn(vectors.nrows(), order.len(), |r, c| vectors[(r, order[c])]);
    (q, v)
}

/// Chooses the band-ordering cut: pi when it lies in an empty arc at least
/// 1e-3 wide, otherwise the centre of the widest empty arc.
pub fn choose_branch_cut(phases: &[f64]) -> f64 {
    let pi = std::f64::consts::PI;
    if phases.is_empty() {
        return pi;
    }
    let mut p: Vec<f64> = phases.iter().map(|&x| wrap_phase(x)).collect();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let first = p[0];
    let last = *p.last().unwrap();
    let wrap_arc = first + TWO_PI - last;
    if wrap_arc > 1e-3 && last < pi {
        return pi;
    }
    let mut best = (wrap_arc, last + 0.5 * wrap_arc);
    for w in p.windows(2) {
        let arc = w[1] - w[0];
        if arc > best.0 {
            best = (arc, w[0] + 0.5 * arc);
        }
    }
    wrap_phase(best.1)
}

/// Uniform periodic grid `-pi/a + 2 pi i / (n a)`, `i = 0..n`.
pub fn periodic_grid(n: usize, a: f64) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    (0..n).map(|i| (-pi + TWO_PI * i as f64 / n as f64) / a).collect()
}

/// Bulk quasienergy bands on an `n x n` periodic Brillouin-zone grid.
pub fn bulk_bands(params: &LatticeParams, n: usize) -> Result<FloquetSpectrum> {
    params.validate()?;
    if n < 3 {
        return Err(Error::InvalidParameter(format!("bulk grid needs >= 3 points per axis, got {n}")));
    }
    let axis = periodic_grid(n, params.lattice_constant_um);
    let k_grid: Vec<[f64; 2]> = axis.iter().flat_map(|&kx| axis.iter().map(move |&ky| [kx, ky])).collect();
    let raw = k_grid
        .par_iter()
        .map(|&k| unitary_eigen(&bulk_floquet(params, k)?))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = raw.iter().flat_map(|e| e.phases.iter().copied()).collect();
    let cut = choose_branch_cut(&all);
    let mut quasienergies = Vec::with_capacity(raw.len());
    let mut eigenvectors = Vec::with_capacity(raw.len());
    for e in &raw {
        let (q, v) = sort_by_cut(&e.phases, &e.vectors, cut);
        quasienergies.push(q);
        eigenvectors.push(v);
    }
    let nk = k_grid.len();
    Ok(FloquetSpectrum {
        k_grid,
        grid_shape: (n, n),
        branch_cut: cut,
        quasienergies,
        eigenvectors,
        labels: vec![vec![StateLabel::Bulk; 3]; nk],
        boundary_weight: vec![vec![0.0; 3]; nk],
    })
}

/// Gap summary for export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub gap_id: String,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub edge_modes_bottom: usize,
    pub edge_modes_top: usize,
    pub chern_below: i64,
    pub chern_above: i64,
}

/// Combines bulk gaps, Chern numbers and ribbon edge-branch counts.
pub fn gap_reports(bulk: &FloquetSpectrum, cherns: &[i64], ribbon: Option<&RibbonSpectrum>) -> Vec<GapReport> {
    bulk.gaps(1e-6)
        .iter()
        .map(|g| {
            let (b, t) = ribbon
                .and_then(|r| r.crossings.get(g.id))
                .map(|c| (c[0], c[1]))
                .unwrap_or((0, 0));
            GapReport {
                gap_id: g.roman().to_string(),
                lower: g.lower,
                upper: g.upper(),
                width: g.width,
                edge_modes_bottom: b,
                edge_modes_top: t,
                chern_below: cherns.get(g.band_below).copied().unwrap_or(0),
                chern_above: cherns.get(g.band_above).copied().unwrap_or(0),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::theta_98;
    use crate::linalg::{unitarity_residual, CVector, C64, I};

    fn params(theta: f64) -> LatticeParams {
        LatticeParams { theta_a: theta, ..LatticeParams::default() }
    }

    #[test]
    fn zero_steps_give_identity() {
        let steps: Vec<StepHamiltonian> =
            (1..=4).map(|j| StepHamiltonian { j, matrix: CMatrix::zeros(3, 3) }).collect();
        let u = floquet_operator(&steps, 100.0).unwrap();
        assert!((u - CMatrix::identity(3, 3)).norm() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut steps: Vec<StepHamiltonian> =
            (1..=4).map(|j| StepHamiltonian { j, matrix: CMatrix::zeros(3, 3) }).collect();
        steps[2].matrix = CMatrix::zeros(6, 6);
        assert!(matches!(floquet_operator(&steps, 1.0), Err(Error::DimensionMismatch(_))));
        assert!(floquet_operator(&steps[..3], 1.0).is_err());
    }

    /// Independent construction: dense products of explicit 3x3 blocks.
    fn explicit_u(theta: f64, kx: f64, ky: f64) -> CMatrix {
        let (c, s) = (theta.cos(), theta.sin());
        let mix = |a: usize, b: usize, ph: f64| {
            let mut m = CMatrix::identity(3, 3);
            m[(a, a)] = C64::new(c, 0.0);
            m[(b, b)] = C64::new(c, 0.0);
            // exp(-i theta [[0, e^{-i ph}], [e^{i ph}, 0]])
            m[(a, b)] = -I * s * (-I * ph).exp();
            m[(b, a)] = -I * s * (I * ph).exp();
            m
        };
        mix(0, 2, ky) * mix(0, 1, kx) * mix(0, 2, 0.0) * mix(0, 1, 0.0)
    }

    #[test]
    fn bulk_operator_matches_explicit_product() {
        let p = params(1.2);
        for &(kx, ky) in &[(0.0, 0.0), (0.7, -1.9), (3.1, 2.2)] {
            let k = [kx / p.lattice_constant_um, ky / p.lattice_constant_um];
            let u = bulk_floquet(&p, k).unwrap();
            assert!((u - explicit_u(1.2, kx, ky)).norm() < 1e-12);
        }
    }

    /// Roots of the characteristic polynomial by Durand-Kerner iteration.
    fn char_poly_roots(u: &CMatrix) -> Vec<C64> {
        let tr = u.trace();
        let minors = u[(0, 0)] * u[(1, 1)] - u[(0, 1)] * u[(1, 0)]
            + u[(0, 0)] * u[(2, 2)]
            - u[(0, 2)] * u[(2, 0)]
            + u[(1, 1)] * u[(2, 2)]
            - u[(1, 2)] * u[(2, 1)];
        let det = u.determinant();
        let p = |z: C64| z * z * z - tr * z * z + minors * z - det;
        let mut r = [C64::new(0.4, 0.9), C64::new(0.4, 0.9).powu(2), C64::new(0.4, 0.9).powu(3)];
        for _ in 0..500 {
            for i in 0..3 {
                let mut den = C64::new(1.0, 0.0);
                for j in 0..3 {
                    if i != j {
                        den *= r[i] - r[j];
                    }
                }
                r[i] -= p(r[i]) / den;
            }
        }
        r.to_vec()
    }

    #[test]
    fn eigenphases_match_characteristic_polynomial() {
        let p = params(1.2);
        let u = bulk_floquet(&p, [0.0, 0.0]).unwrap();
        let mut got = unitary_eigen(&u).unwrap().phases;
        let mut want: Vec<f64> = char_poly_roots(&u).iter().map(|z| wrap_phase(z.arg())).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn full_coupling_gives_cube_roots() {
        // theta = pi/2: each step is a swap with factor -i; three swaps per
        // period return light to its ring, so U^3 is a multiple of identity
        // and the eigenphases are spaced by 2 pi / 3.
        let p = params(std::f64::consts::FRAC_PI_2);
        let u = bulk_floquet(&p, [0.0, 0.0]).unwrap();
        let mut ph = unitary_eigen(&u).unwrap().phases;
        ph.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let third = TWO_PI / 3.0;
        assert!((ph[0] + third).abs() < 1e-12, "{ph:?}");
        assert!(ph[1].abs() < 1e-12);
        assert!((ph[2] - third).abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_gives_zero_quasienergy() {
        let s = bulk_bands(&params(0.0), 5).unwrap();
        for q in &s.quasienergies {
            assert!(q.iter().all(|e| e.abs() < 1e-15));
        }
    }

    #[test]
    fn anomalous_bands_three_gaps_and_flat_band() {
        let s = bulk_bands(&params(theta_98()), 40).unwrap();
        let gaps = s.gaps(1e-6);
        assert_eq!(gaps.len(), 3);
        let (b, spread) = s.flattest_band();
        assert!(spread < 1e-12);
        for q in &s.quasienergies {
            assert!(q[b].abs() < 1e-8);
        }
        assert!((gaps[0].lower + 1.7748).abs() < 1e-3, "{gaps:?}");
        assert!(gaps[0].upper().abs() < 1e-8);
        assert!(gaps[1].lower.abs() < 1e-8);
        assert!((gaps[2].width - 1.4246).abs() < 2e-3, "{gaps:?}");
    }

    #[test]
    fn unitarity_and_orthonormality() {
        let p = params(1.3);
        let u = bulk_floquet(&p, [0.01, 0.03]).unwrap();
        assert!(unitarity_residual(&u) < 1e-12);
        let e = unitary_eigen(&u).unwrap();
        assert!(unitarity_residual(&e.vectors) < 1e-10);
        for j in 0..3 {
            let v: CVector = e.vectors.column(j).into();
            let lam = (I * e.phases[j]).exp();
            assert!((&u * &v - v * lam).norm() < 1e-10);
        }
    }

    #[test]
    fn gap_offset_wraps() {
        let g = Gap { id: 2, lower: 2.4, width: 1.4, band_below: 2, band_above: 0 };
        assert!(g.contains(-3.0, 1e-3));
        assert!(g.contains(3.1, 1e-3));
        assert!(!g.contains(0.0, 1e-3));
    }

    #[test]
    fn branch_cut_prefers_pi() {
        assert_eq!(choose_branch_cut(&[0.0, 1.0, -1.0]), std::f64::consts::PI);
        let cut = choose_branch_cut(&[3.1415, -3.1415, -2.0, -1.0, 0.0, 0.6]);
        assert!((cut - 0.5 * (0.6 + 3.1415)).abs() < 1e-12, "{cut}");
    }
}

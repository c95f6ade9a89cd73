//! Frequency-domain steady state of a finite lattice with port waveguides.
//!
//! During step `j` every ring propagates a quarter of its circumference. A
//! ring coupled to a partner in that step evolves with the exact two-mode
//! propagator `g exp(i [[d_a, theta], [theta, d_b]])`, where
//! `g = a exp(i beta L / 4)` carries propagation and loss and `d` are the
//! extra segment phases; without detuning this is the lumped coupler with
//! through `cos theta` and cross `i sin theta`. Unknowns are the ring
//! amplitudes entering step 1, which satisfy `(I - E4 E3 E2 E1) x = c`; the
//! system is banded and solved directly.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::fdmr::{loop_rings, LoopFamily};
use crate::lattice::{FiniteGeometry, RingSite};
use crate::linalg::{exp_2x2, BandedMatrix, PairOperator, C64};
use crate::numerics::{linspace, median};
use crate::optim::{levenberg_marquardt, LmOptions};
use crate::rng::stream_rng;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Steady-state field of the lattice for unit input amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub lambda_nm: f64,
    /// Ring amplitude at the start of each segment, `[ring][j - 1]`.
    pub amplitudes: Vec<[C64; 4]>,
    /// Output-port waveguide amplitude.
    pub t_out: C64,
    /// Input-port through amplitude.
    pub thru: C64,
}

impl FieldState {
    /// Total power leaving through both port waveguides.
    pub fn exit_power(&self) -> f64 {
        self.t_out.norm_sqr() + self.thru.norm_sqr()
    }

    /// Mean of `|amplitude|^2` over the four segments of each ring.
    pub fn ring_intensity(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.iter().map(|z| z.norm_sqr()).sum::<f64>() / 4.0).collect()
    }
}

/// Port block `g exp(i [[d, theta], [theta, 0]])` acting on (ring, waveguide).
#[derive(Debug, Clone, Copy)]
struct PortBlock {
    ring: usize,
    step: u8,
    ring_ring: C64,
    ring_from_wg: C64,
    wg_from_ring: C64,
    wg_wg: C64,
}

/// Step operators of one wavelength.
struct Steps {
    e: [PairOperator; 4],
    input: PortBlock,
    output: PortBlock,
}

fn port_block(geom: &FiniteGeometry, ring: usize, step: u8, theta: f64, g: C64) -> PortBlock {
    let d = geom.segment_phase[ring][(step - 1) as usize];
    let (diag, off) = exp_2x2(d, 0.0, C64::new(theta, 0.0), 1.0);
    PortBlock { ring, step, ring_ring: g * diag[0], ring_from_wg: g * off[0], wg_from_ring: g * off[1], wg_wg: g * diag[1] }
}

fn build_steps(geom: &FiniteGeometry, lambda_nm: f64) -> Steps {
    let n = geom.ring_count();
    let phase = geom.dispersion.beta(lambda_nm) * geom.ring_length_um / 4.0;
    let g = C64::from_polar(geom.segment_amplitude, phase);
    let input = port_block(geom, geom.input.ring, geom.input.step, geom.input.theta, g);
    let output = port_block(geom, geom.output.ring, geom.output.step, geom.output.theta, g);
    let e = std::array::from_fn(|s| {
        let j = (s + 1) as u8;
        let mut op = PairOperator {
            diag: (0..n).map(|r| g * C64::from_polar(1.0, geom.segment_phase[r][s])).collect(),
            partner: vec![None; n],
            off: vec![ZERO; n],
        };
        for c in geom.couplers.iter().filter(|c| c.step == j) {
            let (da, db) = (geom.segment_phase[c.a][s], geom.segment_phase[c.b][s]);
            let (diag, off) = exp_2x2(da, db, C64::new(c.theta, 0.0), 1.0);
            op.diag[c.a] = g * diag[0];
            op.diag[c.b] = g * diag[1];
            op.off[c.a] = g * off[0];
            op.off[c.b] = g * off[1];
            op.partner[c.a] = Some(c.b);
            op.partner[c.b] = Some(c.a);
        }
        for p in [&input, &output] {
            if p.step == j {
                op.diag[p.ring] = p.ring_ring;
            }
        }
        op
    });
    Steps { e, input, output }
}

/// Solves the steady state at one wavelength.
pub fn steady_state(geom: &FiniteGeometry, lambda_nm: f64) -> Result<FieldState> {
    if !(lambda_nm.is_finite() && lambda_nm > 0.0) {
        return Err(Error::InvalidParameter(format!("wavelength {lambda_nm} nm")));
    }
    let n = geom.ring_count();
    let st = build_steps(geom, lambda_nm);
    let s_in = st.input.step as usize;

    // Round-trip operator M = E4 E3 E2 E1, column by column.
    let mut cols: Vec<Vec<(usize, C64)>> = Vec::with_capacity(n);
    let (mut kl, mut ku) = (0usize, 0usize);
    let mut x = vec![ZERO; n];
    let mut y = vec![ZERO; n];
    for c in 0..n {
        x.iter_mut().for_each(|v| *v = ZERO);
        x[c] = C64::new(1.0, 0.0);
        for op in &st.e {
            op.apply(&x, &mut y);
            std::mem::swap(&mut x, &mut y);
        }
        let nz: Vec<(usize, C64)> = x.iter().enumerate().filter(|(_, v)| **v != ZERO).map(|(r, v)| (r, *v)).collect();
        for &(r, _) in &nz {
            if r > c {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
        }
        cols.push(nz);
    }
    let mut a = BandedMatrix::zeros(n, kl, ku);
    for r in 0..n {
        a.add(r, r, C64::new(1.0, 0.0));
    }
    for (c, col) in cols.iter().enumerate() {
        for &(r, v) in col {
            a.add(r, c, -v);
        }
    }

    // Drive injected after the input step, carried to the start of step 1.
    let mut rhs = vec![ZERO; n];
    rhs[st.input.ring] = st.input.ring_from_wg;
    for op in &st.e[s_in..] {
        op.apply(&rhs, &mut y);
        std::mem::swap(&mut rhs, &mut y);
    }
    let x1 = a.solve(&rhs)?;

    let mut seg = vec![x1];
    for (s, op) in st.e.iter().enumerate().take(3) {
        let mut next = vec![ZERO; n];
        op.apply(&seg[s], &mut next);
        if s + 1 == s_in {
            next[st.input.ring] += st.input.ring_from_wg;
        }
        seg.push(next);
    }
    let amplitudes: Vec<[C64; 4]> = (0..n).map(|r| [seg[0][r], seg[1][r], seg[2][r], seg[3][r]]).collect();
    if amplitudes.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Singular(format!("non-finite field at {lambda_nm} nm")));
    }
    let out = &st.output;
    let t_out = out.wg_from_ring * amplitudes[out.ring][(out.step - 1) as usize];
    let inp = &st.input;
    let thru = inp.wg_from_ring * amplitudes[inp.ring][s_in - 1] + inp.wg_wg;
    Ok(FieldState { lambda_nm, amplitudes, t_out, thru })
}

/// Complex output amplitude on a wavelength grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionSpectrum {
    pub wavelength_nm: Vec<f64>,
    pub t: Vec<C64>,
}

impl TransmissionSpectrum {
    pub fn power(&self) -> Vec<f64> {
        self.t.iter().map(|z| z.norm_sqr()).collect()
    }
}

pub fn transmission_spectrum(geom: &FiniteGeometry, start_nm: f64, stop_nm: f64, points: usize) -> Result<TransmissionSpectrum> {
    if points < 2 {
        return Err(Error::InvalidParameter("spectrum needs at least 2 points".into()));
    }
    if !(start_nm > 0.0 && stop_nm > start_nm) {
        return Err(Error::InvalidParameter(format!("wavelength range [{start_nm}, {stop_nm}]")));
    }
    let grid = linspace(start_nm, stop_nm, points);
    let t = grid.par_iter().map(|&l| steady_state(geom, l).map(|s| s.t_out)).collect::<Result<Vec<_>>>()?;
    Ok(TransmissionSpectrum { wavelength_nm: grid, t })
}

/// A transmission dip with its local Lorentzian fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub lambda0_nm: f64,
    pub fwhm_nm: f64,
    /// Absolute drop of `T` below the local baseline.
    pub depth: f64,
    pub baseline: f64,
    /// Loaded quality factor `lambda0 / fwhm`.
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipSearch {
    /// Minimum prominence of a dip in `T`.
    pub min_depth: f64,
    /// Fit window half-width in units of the estimated FWHM.
    pub fit_halfwidths: f64,
}

impl Default for DipSearch {
    fn default() -> Self {
        Self { min_depth: 0.1, fit_halfwidths: 2.0 }
    }
}

/// Lorentzian dip `B - D / (1 + 4 ((x - x0) / w)^2)`.
pub fn lorentzian_dip(x: f64, x0: f64, w: f64, depth: f64, base: f64) -> f64 {
    let u = 2.0 * (x - x0) / w;
    base - depth / (1.0 + u * u)
}

fn prominence(t: &[f64], i: usize) -> f64 {
    let mut left = t[i];
    for k in (0..i).rev() {
        if t[k] < t[i] {
            break;
        }
        left = left.max(t[k]);
    }
    let mut right = t[i];
    for &v in &t[i + 1..] {
        if v < t[i] {
            break;
        }
        right = right.max(v);
    }
    left.min(right) - t[i]
}

fn half_crossing(x: &[f64], t: &[f64], i: usize, level: f64, dir: isize) -> Option<f64> {
    let mut k = i as isize;
    loop {
        let next = k + dir;
        if next < 0 || next as usize >= t.len() {
            return None;
        }
        let (a, b) = (k as usize, next as usize);
        if t[b] >= level {
            let f = (level - t[a]) / (t[b] - t[a]);
            return Some(x[a] + f * (x[b] - x[a]));
        }
        k = next;
    }
}

/// Finds dips with prominence above `opts.min_depth` and fits each locally.
pub fn find_resonances(spec: &TransmissionSpectrum, opts: &DipSearch) -> Vec<Resonance> {
    find_dips(&spec.wavelength_nm, &spec.power(), opts)
}

/// Dips of an arbitrary sampled curve `t(x)`.
pub fn find_dips(x: &[f64], t: &[f64], opts: &DipSearch) -> Vec<Resonance> {
    let n = t.len();
    let mut out = Vec::new();
    if n < 3 || x.len() != n {
        return out;
    }
    for i in 1..n - 1 {
        if !(t[i] < t[i - 1] && t[i] <= t[i + 1]) {
            continue;
        }
        let prom = prominence(t, i);
        if prom < opts.min_depth {
            continue;
        }
        let level = t[i] + 0.5 * prom;
        let (Some(lo), Some(hi)) = (half_crossing(x, t, i, level, -1), half_crossing(x, t, i, level, 1)) else {
            continue;
        };
        let w_est = hi - lo;
        let est = Resonance { lambda0_nm: x[i], fwhm_nm: w_est, depth: prom, baseline: t[i] + prom, q: x[i] / w_est };
        out.push(fit_dip(x, t, est, opts).unwrap_or(est));
    }
    out
}

fn fit_dip(x: &[f64], t: &[f64], est: Resonance, opts: &DipSearch) -> Option<Resonance> {
    let half = opts.fit_halfwidths * est.fwhm_nm;
    let idx: Vec<usize> = (0..x.len()).filter(|&k| (x[k] - est.lambda0_nm).abs() <= half).collect();
    if idx.len() < 6 {
        return None;
    }
    // Scaled parameters: centre offset and width in units of the estimate.
    let (x0, w0) = (est.lambda0_nm, est.fwhm_nm);
    let res = levenberg_marquardt(
        |p, r| {
            for (k, &i) in idx.iter().enumerate() {
                r[k] = lorentzian_dip(x[i], x0 + p[0] * w0, p[1] * w0, p[2], p[3]) - t[i];
            }
        },
        &[0.0, 1.0, est.depth, est.baseline],
        idx.len(),
        &LmOptions::default(),
    )
    .ok()?;
    let p = &res.params;
    let lambda0 = x0 + p[0] * w0;
    let fwhm = (p[1] * w0).abs();
    if !(fwhm > 0.0 && (lambda0 - x0).abs() < half && p[2] > 0.0) {
        return None;
    }
    Some(Resonance { lambda0_nm: lambda0, fwhm_nm: fwhm, depth: p[2], baseline: p[3], q: lambda0 / fwhm })
}

/// Coarse-to-fine search for the most prominent dip near `center_nm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DipTracking {
    pub center_nm: f64,
    pub half_window_nm: f64,
    pub coarse_points: usize,
    pub fine_points: usize,
    /// Fine window half-width in units of the coarse FWHM estimate.
    pub fine_halfwidths: f64,
    pub search: DipSearch,
}

impl DipTracking {
    pub fn around(center_nm: f64, half_window_nm: f64) -> Self {
        Self {
            center_nm,
            half_window_nm,
            coarse_points: 241,
            fine_points: 81,
            fine_halfwidths: 4.0,
            search: DipSearch::default(),
        }
    }
}

/// Fraction of the total ring intensity held by `rings`.
pub fn loop_fraction(state: &FieldState, rings: &[usize]) -> f64 {
    let inten = state.ring_intensity();
    let total: f64 = inten.iter().sum();
    if total > 0.0 {
        rings.iter().map(|&r| inten[r]).sum::<f64>() / total
    } else {
        0.0
    }
}

/// Loop-intensity fraction on a uniform wavelength grid.
pub fn loop_fraction_spectrum(geom: &FiniteGeometry, rings: &[usize], start_nm: f64, stop_nm: f64, points: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if points < 2 || !(start_nm > 0.0 && stop_nm > start_nm) {
        return Err(Error::InvalidParameter(format!("wavelength range [{start_nm}, {stop_nm}] with {points} points")));
    }
    if let Some(&r) = rings.iter().find(|&&r| r >= geom.ring_count()) {
        return Err(Error::SiteOutOfRange(format!("ring index {r}")));
    }
    let grid = linspace(start_nm, stop_nm, points);
    let f = grid.par_iter().map(|&l| steady_state(geom, l).map(|s| loop_fraction(&s, rings))).collect::<Result<Vec<_>>>()?;
    Ok((grid, f))
}

/// Resonances of the field trapped on `rings`: maxima of the loop-intensity
/// fraction with prominence above `min_prominence`, fitted as Lorentzians.
/// `depth` and `baseline` refer to the fraction, not to `T`.
pub fn loop_resonances(geom: &FiniteGeometry, rings: &[usize], start_nm: f64, stop_nm: f64, points: usize, min_prominence: f64) -> Result<Vec<Resonance>> {
    let (x, f) = loop_fraction_spectrum(geom, rings, start_nm, stop_nm, points)?;
    let neg: Vec<f64> = f.iter().map(|v| -v).collect();
    let opts = DipSearch { min_depth: min_prominence, ..DipSearch::default() };
    Ok(find_dips(&x, &neg, &opts)
        .into_iter()
        .map(|r| Resonance { baseline: -r.baseline, ..r })
        .collect())
}

/// Coarse-to-fine tracking of one dip. With `loop_core` the dip whose
/// field is most concentrated on those rings is chosen, otherwise the deepest.
pub fn track_dip(geom: &FiniteGeometry, tr: &DipTracking, loop_core: Option<&[usize]>) -> Result<Option<Resonance>> {
    let coarse = transmission_spectrum(geom, tr.center_nm - tr.half_window_nm, tr.center_nm + tr.half_window_nm, tr.coarse_points)?;
    let found = find_resonances(&coarse, &tr.search);
    let best = match loop_core {
        Some(core) => {
            let mut scored = Vec::with_capacity(found.len());
            for r in found {
                scored.push((loop_fraction(&steady_state(geom, r.lambda0_nm)?, core), r));
            }
            scored.into_iter().max_by(|a, b| a.0.partial_cmp(&b.0).unwrap()).map(|(_, r)| r)
        }
        None => found.into_iter().max_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap()),
    };
    let Some(best) = best else {
        return Ok(None);
    };
    let step = 2.0 * tr.half_window_nm / (tr.coarse_points - 1) as f64;
    let half = (tr.fine_halfwidths * best.fwhm_nm).max(3.0 * step);
    let fine = transmission_spectrum(geom, best.lambda0_nm - half, best.lambda0_nm + half, tr.fine_points)?;
    let dist = |r: &Resonance| (r.lambda0_nm - best.lambda0_nm).abs();
    Ok(find_resonances(&fine, &tr.search).into_iter().min_by(|a, b| dist(a).partial_cmp(&dist(b)).unwrap()).or(Some(best)))
}

/// Monte Carlo disorder applied around a defect loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSpec {
    /// Relative coupling-angle deviation; angles scale by `1 + u`, `|u| <= sigma`.
    pub sigma_coupling: f64,
    /// Round-trip phase deviation as a fraction of `2 pi`.
    pub sigma_phase: f64,
    /// Affected rings; defaults to the defect loop and its neighbours.
    #[serde(default)]
    pub region: Option<Vec<RingSite>>,
    pub trials: usize,
    pub seed: u64,
}

impl DisorderSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.sigma_coupling) {
            return Err(Error::InvalidParameter(format!("sigma_coupling = {} outside [0, 0.5)", self.sigma_coupling)));
        }
        if !(self.sigma_phase >= 0.0 && self.sigma_phase.is_finite()) {
            return Err(Error::InvalidParameter("sigma_phase must be non-negative".into()));
        }
        if self.trials < 1 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Rings of the loop through a defect B ring in a finite lattice plus their
/// coupled neighbours. A bottom-row defect supports only the upper loop.
pub fn loop_region(geom: &FiniteGeometry, site: RingSite) -> Result<Vec<usize>> {
    site.check(geom.nx, geom.ny)?;
    if site.m + 1 >= geom.nx || site.n + 1 >= geom.ny {
        return Err(Error::SiteOutOfRange(format!("loop through {site:?} leaves the lattice")));
    }
    let core = loop_rings(site, LoopFamily::Upper, geom.nx, geom.ny);
    let mut v = core.clone();
    for &r in &core {
        v.extend(geom.neighbors(r));
    }
    v.sort_unstable();
    v.dedup();
    Ok(v)
}

/// Applies one disorder draw to a copy of the geometry.
pub fn perturb(geom: &FiniteGeometry, region: &[usize], spec: &DisorderSpec, trial: u64) -> FiniteGeometry {
    let mut rng = stream_rng(spec.seed, trial);
    let mut g = geom.clone();
    let inside = |r: usize| region.binary_search(&r).is_ok();
    for c in g.couplers.iter_mut() {
        if inside(c.a) || inside(c.b) {
            let u: f64 = rng.random_range(-1.0..=1.0);
            c.theta *= 1.0 + spec.sigma_coupling * u;
        }
    }
    for &r in region {
        let u: f64 = rng.random_range(-1.0..=1.0);
        let psi = spec.sigma_phase * crate::linalg::TWO_PI * u;
        for s in g.segment_phase[r].iter_mut() {
            *s += psi / 4.0;
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub survived: bool,
    pub resonance: Option<Resonance>,
    pub shift_nm: Option<f64>,
    pub fwhm_change_nm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub sigma_coupling: f64,
    pub sigma_phase: f64,
    pub seed: u64,
    pub reference: Resonance,
    pub trials: Vec<TrialResult>,
    pub survival_fraction: f64,
    pub median_abs_shift_nm: f64,
    pub max_abs_shift_nm: f64,
    pub median_abs_fwhm_change_nm: f64,
    pub max_abs_fwhm_change_nm: f64,
    pub q_min: f64,
    pub q_max: f64,
}

/// Runs `spec.trials` perturbed lattices and tracks the defect dip in each.
pub fn disorder_ensemble(geom: &FiniteGeometry, defect_site: RingSite, spec: &DisorderSpec, tracking: &DipTracking) -> Result<EnsembleSummary> {
    spec.validate()?;
    let region: Vec<usize> = match &spec.region {
        Some(sites) => {
            let mut v = sites
                .iter()
                .map(|s| s.check(geom.nx, geom.ny).map(|_| s.index(geom.nx)))
                .collect::<Result<Vec<_>>>()?;
            v.sort_unstable();
            v.dedup();
            v
        }
        None => loop_region(geom, defect_site)?,
    };
    loop_region(geom, defect_site)?;
    let core = loop_rings(defect_site, LoopFamily::Upper, geom.nx, geom.ny);
    let reference = track_dip(geom, tracking, Some(&core))?
        .ok_or_else(|| Error::Fit("no reference dip inside the tracking window".into()))?;
    let trials = (0..spec.trials)
        .into_par_iter()
        .map(|k| -> Result<TrialResult> {
            let g = perturb(geom, &region, spec, k as u64);
            let r = track_dip(&g, tracking, Some(&core))?;
            Ok(TrialResult {
                trial: k,
                survived: r.is_some(),
                resonance: r,
                shift_nm: r.map(|r| r.lambda0_nm - reference.lambda0_nm),
                fwhm_change_nm: r.map(|r| r.fwhm_nm - reference.fwhm_nm),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let shifts: Vec<f64> = trials.iter().filter_map(|t| t.shift_nm.map(f64::abs)).collect();
    let widths: Vec<f64> = trials.iter().filter_map(|t| t.fwhm_change_nm.map(f64::abs)).collect();
    let qs: Vec<f64> = trials.iter().filter_map(|t| t.resonance.map(|r| r.q)).collect();
    let survived = trials.iter().filter(|t| t.survived).count();
    Ok(EnsembleSummary {
        sigma_coupling: spec.sigma_coupling,
        sigma_phase: spec.sigma_phase,
        seed: spec.seed,
        reference,
        survival_fraction: survived as f64 / spec.trials as f64,
        median_abs_shift_nm: median(&shifts).unwrap_or(f64::NAN),
        max_abs_shift_nm: shifts.iter().copied().fold(f64::NAN, f64::max),
        median_abs_fwhm_change_nm: median(&widths).unwrap_or(f64::NAN),
        max_abs_fwhm_change_nm: widths.iter().copied().fold(f64::NAN, f64::max),
        q_min: qs.iter().copied().fold(f64::NAN, f64::min),
        q_max: qs.iter().copied().fold(f64::NAN, f64::max),
        trials,
    })
}

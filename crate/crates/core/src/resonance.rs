//! Single-resonance transmission with Kerr detuning and facet reflections,
//! least-squares extraction of quality factors, and linear tuning maps.

use serde::{Deserialize, Serialize};

use crate::constants::{omega_from_nm, HBAR};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::numerics::linear_fit;
use crate::optim::{levenberg_marquardt, LmOptions};

/// Input and output facets of the chip forming a weak etalon around the resonance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Facet {
    pub r1: C64,
    pub r2: C64,
    pub t1: f64,
    pub t2: f64,
    /// Round-trip propagation phase at the resonance (rad).
    pub phi: f64,
    /// Round-trip group delay (s); the phase is `phi + delay_s (omega - omega0)`.
    #[serde(default)]
    pub delay_s: f64,
}

impl Facet {
    pub fn none() -> Self {
        Self { r1: C64::new(0.0, 0.0), r2: C64::new(0.0, 0.0), t1: 1.0, t2: 1.0, phi: 0.0, delay_s: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (r, t) in [(self.r1, self.t1), (self.r2, self.t2)] {
            if !(t >= 0.0) || r.norm_sqr() + t * t > 1.0 + 1e-9 {
                return Err(Error::InvalidParameter(format!("facet needs t >= 0 and |r|^2 + t^2 <= 1, got r = {r}, t = {t}")));
            }
        }
        if (self.r1 * self.r2).norm() >= 1.0 {
            return Err(Error::InvalidParameter("facet round trip |r1 r2| must be < 1".into()));
        }
        Ok(())
    }
}

impl Default for Facet {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceParams {
    pub omega0: f64,
    pub kappa_ext: f64,
    pub kappa_int: f64,
    /// Kerr coefficient (rad/s per photon); 0 for a linear resonance.
    #[serde(default)]
    pub g_nl: f64,
    #[serde(default)]
    pub facet: Facet,
}

impl ResonanceParams {
    /// Linear resonance without facets from wavelength and quality factors.
    pub fn from_q(lambda0_nm: f64, q_e: f64, q_i: f64) -> Self {
        let omega0 = omega_from_nm(lambda0_nm);
        Self { omega0, kappa_ext: omega0 / q_e, kappa_int: omega0 / q_i, g_nl: 0.0, facet: Facet::none() }
    }

    pub fn kappa(&self) -> f64 {
        self.kappa_ext + self.kappa_int
    }

    pub fn q_t(&self) -> f64 {
        self.omega0 / self.kappa()
    }

    pub fn q_e(&self) -> f64 {
        self.omega0 / self.kappa_ext
    }

    pub fn q_i(&self) -> f64 {
        self.omega0 / self.kappa_int
    }

    /// Checks the resonance and the facet energy bounds.
    pub fn validate(&self) -> Result<()> {
        self.validate_resonance()?;
        self.facet.validate()
    }

    fn validate_resonance(&self) -> Result<()> {
        if !(self.omega0 > 0.0 && self.kappa_ext >= 0.0 && self.kappa_int >= 0.0 && self.kappa() > 0.0 && self.g_nl >= 0.0) {
            return Err(Error::InvalidParameter("resonance needs omega0 > 0, kappas >= 0 with positive sum, g_nl >= 0".into()));
        }
        Ok(())
    }
}

/// `Q_t = 1 / (1/Q_e + 1/Q_i)`.
pub fn q_compose(q_e: f64, q_i: f64) -> Result<f64> {
    if !(q_e > 0.0 && q_i > 0.0) {
        return Err(Error::InvalidParameter("quality factors must be positive".into()));
    }
    Ok(1.0 / (1.0 / q_e + 1.0 / q_i))
}

/// Relative violation of `1/Q_t = 1/Q_e + 1/Q_i`.
pub fn q_identity_residual(q_t: f64, q_e: f64, q_i: f64) -> Result<f64> {
    Ok((q_compose(q_e, q_i)? / q_t - 1.0).abs())
}

/// Measured quality factors of one mode pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QTableRow {
    pub fsr: u32,
    /// Idler `(Q_t, Q_e, Q_i)`.
    pub idler: [f64; 3],
    /// Signal `(Q_t, Q_e, Q_i)`.
    pub signal: [f64; 3],
}

/// Extracted quality factors of nine defect-mode pairs.
pub const Q_TABLE: [QTableRow; 9] = [
    QTableRow { fsr: 1, idler: [62918.0, 95050.0, 186120.0], signal: [25471.0, 30966.0, 143542.0] },
    QTableRow { fsr: 2, idler: [30806.0, 122399.0, 41167.0], signal: [47116.0, 124749.0, 75712.0] },
    QTableRow { fsr: 3, idler: [47184.0, 82361.0, 110472.0], signal: [52778.0, 83187.0, 144382.0] },
    QTableRow { fsr: 4, idler: [62374.0, 95585.0, 179523.0], signal: [21536.0, 108772.0, 26852.0] },
    QTableRow { fsr: 5, idler: [33550.0, 50157.0, 101326.0], signal: [33174.0, 51111.0, 94531.0] },
    QTableRow { fsr: 6, idler: [54625.0, 88776.0, 142001.0], signal: [51767.0, 78703.0, 151259.0] },
    QTableRow { fsr: 7, idler: [75958.0, 227300.0, 114081.0], signal: [20122.0, 113791.0, 24445.0] },
    QTableRow { fsr: 8, idler: [36358.0, 60597.0, 90891.0], signal: [28535.0, 43627.0, 82483.0] },
    QTableRow { fsr: 9, idler: [46185.0, 74315.0, 122014.0], signal: [39249.0, 61741.0, 107736.0] },
];

/// Kerr-shifted coherent transmission at one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KerrPoint {
    pub omega: f64,
    pub t0: C64,
    /// Intracavity photon number on the selected branch.
    pub n: f64,
    /// Three physical roots exist at this frequency.
    pub bistable: bool,
}

/// Non-negative roots of `n ((kappa/2)^2 + (d + 2 g n)^2) = kappa_ext S`, ascending.
pub fn kerr_photon_numbers(params: &ResonanceParams, omega: f64, power_w: f64) -> Vec<f64> {
    let s = power_w / (HBAR * omega);
    let (ke, k, g) = (params.kappa_ext, params.kappa(), params.g_nl);
    let d = omega - params.omega0;
    let drive = ke * s;
    if drive <= 0.0 {
        return vec![0.0];
    }
    let f = |n: f64| n * (0.25 * k * k + (d + 2.0 * g * n).powi(2)) - drive;
    let n_max = drive / (0.25 * k * k);
    if g == 0.0 {
        return vec![drive / (0.25 * k * k + d * d)];
    }
    // Critical points of the cubic split [0, n_max] into monotone pieces.
    let (a, b, c) = (12.0 * g * g, 8.0 * g * d, 0.25 * k * k + d * d);
    let disc = b * b - 4.0 * a * c;
    let mut knots = vec![0.0];
    if disc > 0.0 {
        let q = disc.sqrt();
        for x in [(-b - q) / (2.0 * a), (-b + q) / (2.0 * a)] {
            if x > 0.0 && x < n_max {
                knots.push(x);
            }
        }
    }
    knots.push(n_max);
    let mut roots = Vec::new();
    for w in knots.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (flo, fhi) = (f(lo), f(hi));
        if fhi == 0.0 {
            roots.push(hi);
            continue;
        }
        if flo.signum() == fhi.signum() {
            continue;
        }
        let rising = fhi > flo;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == rising {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        roots.push(0.5 * (lo + hi));
    }
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * n_max);
    roots
}

fn t0_linear(params: &ResonanceParams, detuning: f64) -> C64 {
    C64::new(1.0, 0.0) - params.kappa_ext / C64::new(0.5 * params.kappa(), -detuning)
}

/// `T0 = 1 - kappa_ext / (kappa/2 - i(omega - omega0 + 2 g n))`. With several
/// roots the one nearest `previous` is taken, else the smallest.
pub fn kerr_t0(params: &ResonanceParams, omega: f64, power_w: f64, previous: Option<f64>) -> Result<KerrPoint> {
    params.validate_resonance()?;
    if !(power_w >= 0.0 && omega > 0.0) {
        return Err(Error::InvalidParameter("power must be >= 0 and frequency > 0".into()));
    }
    let roots = kerr_photon_numbers(params, omega, power_w);
    let n = match previous {
        Some(p) => roots.iter().copied().min_by(|a, b| (a - p).abs().total_cmp(&(b - p).abs())),
        None => roots.first().copied(),
    }
    .ok_or_else(|| Error::InvalidParameter("Kerr cubic has no non-negative root".into()))?;
    Ok(KerrPoint {
        omega,
        t0: t0_linear(params, omega - params.omega0 + 2.0 * params.g_nl * n),
        n,
        bistable: roots.len() >= 3,
    })
}

/// Direction of a laser sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepDirection {
    /// Increasing wavelength, i.e. decreasing frequency.
    #[default]
    UpInWavelength,
    DownInWavelength,
}

/// `T0` along a frequency grid, following one branch by continuation in the sweep direction.
pub fn kerr_sweep(params: &ResonanceParams, omegas: &[f64], power_w: f64, direction: SweepDirection) -> Result<Vec<KerrPoint>> {
    let mut order: Vec<usize> = (0..omegas.len()).collect();
    // Wavelength grows as frequency falls.
    let descending = direction == SweepDirection::UpInWavelength;
    order.sort_by(|&a, &b| if descending { omegas[b].total_cmp(&omegas[a]) } else { omegas[a].total_cmp(&omegas[b]) });
    let mut out = vec![None; omegas.len()];
    let mut prev = None;
    for i in order {
        let p = kerr_t0(params, omegas[i], power_w, prev)?;
        prev = Some(p.n);
        out[i] = Some(p);
    }
    Ok(out.into_iter().map(|p| p.expect("every index visited")).collect())
}

/// `T = |t1 t2|^2 |T0|^2 / |1 - r1 r2 T0^2 e^{-i phi}|^2`.
pub fn facet_from_t0(facet: &Facet, t0: C64, phi: f64) -> Result<f64> {
    let rr = facet.r1 * facet.r2;
    if rr.norm() >= 1.0 {
        return Err(Error::InvalidParameter(format!("|r1 r2| = {} must be < 1", rr.norm())));
    }
    let den = C64::new(1.0, 0.0) - rr * t0 * t0 * C64::from_polar(1.0, -phi);
    Ok((facet.t1 * facet.t2).powi(2) * t0.norm_sqr() / den.norm_sqr())
}

/// Power transmission at one frequency on the lowest Kerr branch.
pub fn facet_transmission(params: &ResonanceParams, omega: f64, power_w: f64) -> Result<f64> {
    let p = kerr_t0(params, omega, power_w, None)?;
    facet_from_t0(&params.facet, p.t0, params.facet.phi + params.facet.delay_s * (omega - params.omega0))
}

/// Power transmission along a swept grid.
pub fn facet_spectrum(params: &ResonanceParams, omegas: &[f64], power_w: f64, direction: SweepDirection) -> Result<Vec<f64>> {
    let pts = kerr_sweep(params, omegas, power_w, direction)?;
    pts.iter()
        .map(|p| facet_from_t0(&params.facet, p.t0, params.facet.phi + params.facet.delay_s * (p.omega - params.omega0)))
        .collect()
}

/// `kappa_ext < kappa_int` is under-coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CouplingRegime {
    #[default]
    Under,
    Over,
}

impl CouplingRegime {
    pub fn of(kappa_ext: f64, kappa_int: f64) -> Self {
        if kappa_ext <= kappa_int {
            Self::Under
        } else {
            Self::Over
        }
    }

    fn other(self) -> Self {
        match self {
            Self::Under => Self::Over,
            Self::Over => Self::Under,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Regime reported as the primary solution.
    pub regime: CouplingRegime,
    /// Fit the facet etalon (`|r1 r2|`, phase) as well as the resonance.
    pub fit_facet: bool,
    /// Heuristic starts per regime.
    pub starts: usize,
    /// Minimum samples per estimated linewidth.
    pub min_samples_per_linewidth: f64,
    /// Relative cost gap below which both regimes are reported as degenerate.
    pub degeneracy_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { regime: CouplingRegime::Under, fit_facet: false, starts: 5, min_samples_per_linewidth: 8.0, degeneracy_tol: 1e-6 }
    }
}

/// One-sigma uncertainties of the fitted quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitUncertainty {
    pub omega0: f64,
    pub kappa_ext: f64,
    pub kappa_int: f64,
    pub q_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeFit {
    pub params: ResonanceParams,
    pub regime: CouplingRegime,
    /// Off-resonance transmission scale `|t1 t2|^2`.
    pub baseline: f64,
    pub lambda0_nm: f64,
    pub q_t: f64,
    pub q_e: f64,
    pub q_i: f64,
    pub sigma: Option<FitUncertainty>,
    /// Root-mean-square residual relative to the mean transmission.
    pub rel_rms: f64,
    pub sse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceFit {
    /// Solution in the requested regime.
    pub primary: RegimeFit,
    /// Best solution in the other regime, if one converged.
    pub alternate: Option<RegimeFit>,
    /// Both regimes fit equally well.
    pub degenerate: bool,
}

struct Scaled {
    omega_ref: f64,
    scale: f64,
}

/// External fraction `kappa_ext / kappa` and its derivative in `u`; each
/// regime covers its half of [0, 1] including critical coupling.
fn external_fraction(regime: CouplingRegime, u: f64) -> (f64, f64) {
    match regime {
        CouplingRegime::Under => (0.25 * (1.0 - u.cos()), 0.25 * u.sin()),
        CouplingRegime::Over => (0.75 + 0.25 * u.cos(), -0.25 * u.sin()),
    }
}

/// Model in scaled units: `p = [x0, kappa, u, baseline, rho, phi]`.
fn scaled_model(regime: CouplingRegime, p: &[f64], x: f64) -> f64 {
    let d = x - p[0];
    let ke = p[1] * external_fraction(regime, p[2]).0;
    let t0 = C64::new(1.0, 0.0) - ke / C64::new(0.5 * p[1], -d);
    let (rho, phi) = if p.len() > 4 { (p[4], p[5]) } else { (0.0, 0.0) };
    let den = C64::new(1.0, 0.0) - rho * t0 * t0 * C64::from_polar(1.0, -phi);
    p[3] * t0.norm_sqr() / den.norm_sqr()
}

/// Fits one isolated dip of a normalized power spectrum.
pub fn fit_resonance(wavelength_nm: &[f64], transmission: &[f64], opts: &FitOptions) -> Result<ResonanceFit> {
    if wavelength_nm.len() != transmission.len() {
        return Err(Error::DimensionMismatch("wavelength and transmission lengths differ".into()));
    }
    if wavelength_nm.len() < 16 || opts.starts == 0 {
        return Err(Error::Fit("need at least 16 samples and one start".into()));
    }
    if wavelength_nm.iter().chain(transmission).any(|v| !v.is_finite()) || wavelength_nm.iter().any(|&l| l <= 0.0) {
        return Err(Error::InvalidParameter("spectrum contains non-finite or non-positive wavelengths".into()));
    }
    let omega: Vec<f64> = wavelength_nm.iter().map(|&l| omega_from_nm(l)).collect();
    let kmin = (0..transmission.len()).min_by(|&a, &b| transmission[a].total_cmp(&transmission[b])).unwrap();
    let mut sorted = transmission.to_vec();
    sorted.sort_by(f64::total_cmp);
    let base = sorted[(0.9 * (sorted.len() - 1) as f64) as usize];
    let tmin = transmission[kmin];
    if !(base > 0.0 && tmin < base) {
        return Err(Error::Fit("no dip below the baseline".into()));
    }
    // Half-depth width around the minimum.
    let half = 0.5 * (base + tmin);
    let mut lo = kmin;
    while lo > 0 && transmission[lo] < half {
        lo -= 1;
    }
    let mut hi = kmin;
    while hi + 1 < transmission.len() && transmission[hi] < half {
        hi += 1;
    }
    let width = (omega[lo] - omega[hi]).abs().max(f64::MIN_POSITIVE);
    let step = (omega[0] - omega[omega.len() - 1]).abs() / (omega.len() - 1) as f64;
    if width / step < opts.min_samples_per_linewidth {
        return Err(Error::Fit(format!("{:.1} samples per linewidth, need {}", width / step, opts.min_samples_per_linewidth)));
    }
    let sc = Scaled { omega_ref: omega[kmin], scale: width };
    let x: Vec<f64> = omega.iter().map(|w| (w - sc.omega_ref) / sc.scale).collect();
    let depth = (1.0 - tmin / base).clamp(0.0, 1.0);
    let root = (1.0 - depth).sqrt();

    let fit_regime = |regime: CouplingRegime| -> Option<RegimeFit> {
        // Both regimes reproduce the dip depth at `cos u = 2 root - 1`.
        let u0 = (2.0 * root - 1.0).clamp(-1.0, 1.0).acos().clamp(0.05, std::f64::consts::PI - 0.05);
        let shifts = [(0.0, 1.0), (0.0, 0.7), (0.0, 1.4), (0.2, 1.0), (-0.2, 1.0)];
        let mut best: Option<(Vec<f64>, crate::optim::LmResult)> = None;
        // The etalon distorts the apparent width, so facet fits also scan it.
        let widths: &[f64] = if opts.fit_facet { &[1.0, 0.5, 2.0] } else { &[1.0] };
        for k in 0..opts.starts * widths.len() {
            let (dx, w) = if opts.fit_facet { (0.0, widths[k / opts.starts]) } else { shifts[k % shifts.len()] };
            let mut p0 = vec![dx, w, u0, base];
            if opts.fit_facet {
                // Spread the etalon phase; the amplitude keeps the off-resonance level at `base`.
                let (rho, phi) = (0.05, std::f64::consts::TAU * (k % opts.starts) as f64 / opts.starts as f64);
                p0[3] = base * (C64::new(1.0, 0.0) - rho * C64::from_polar(1.0, -phi)).norm_sqr();
                p0.extend([rho, phi]);
            }
            let res = levenberg_marquardt(
                |p, r| {
                    let bad = p[1] <= 0.0 || (p.len() > 4 && !(p[4].abs() < 0.99));
                    for i in 0..x.len() {
                        r[i] = if bad { 1e3 } else { scaled_model(regime, p, x[i]) - transmission[i] };
                    }
                },
                &p0,
                x.len(),
                &LmOptions::default(),
            );
            if let Ok(res) = res {
                if !res.sse.is_finite() {
                    continue;
                }
                if best.as_ref().map_or(true, |(_, b)| res.sse < b.sse) {
                    best = Some((res.params.clone(), res));
                }
            }
        }
        let (p, res) = best?;
        let omega0 = sc.omega_ref + p[0] * sc.scale;
        let (f, df) = external_fraction(regime, p[2]);
        let kappa = p[1] * sc.scale;
        let (ke, ki) = (f * kappa, (1.0 - f) * kappa);
        let (rho, phi) = if opts.fit_facet { (p[4], p[5]) } else { (0.0, 0.0) };
        let t = p[3].max(0.0).powf(0.25);
        let r = rho.abs().sqrt();
        let sign = if rho < 0.0 { -1.0 } else { 1.0 };
        let facet = Facet { r1: C64::new(r, 0.0), r2: C64::new(sign * r, 0.0), t1: t, t2: t, phi, delay_s: 0.0 };
        let params = ResonanceParams { omega0, kappa_ext: ke, kappa_int: ki, g_nl: 0.0, facet };
        let q_t = omega0 / (ke + ki);
        let sigma = res.covariance.as_ref().map(|c| {
            let s2 = sc.scale * sc.scale;
            let (ckk, cuu, cku) = (c[(1, 1)] * s2, c[(2, 2)], c[(1, 2)] * sc.scale);
            let g = kappa * df;
            let var_e = f * f * ckk + g * g * cuu + 2.0 * f * g * cku;
            let var_i = (1.0 - f) * (1.0 - f) * ckk + g * g * cuu - 2.0 * (1.0 - f) * g * cku;
            FitUncertainty {
                omega0: c[(0, 0)].max(0.0).sqrt() * sc.scale,
                kappa_ext: var_e.max(0.0).sqrt(),
                kappa_int: var_i.max(0.0).sqrt(),
                q_t: q_t * ckk.max(0.0).sqrt() / kappa,
            }
        });
        let mean = transmission.iter().sum::<f64>() / transmission.len() as f64;
        Some(RegimeFit {
            params,
            regime,
            baseline: p[3],
            lambda0_nm: crate::constants::nm_from_omega(omega0),
            q_t,
            q_e: omega0 / ke,
            q_i: omega0 / ki,
            sigma,
            rel_rms: (res.sse / x.len() as f64).sqrt() / mean.abs().max(f64::MIN_POSITIVE),
            sse: res.sse,
        })
    };

    let primary = fit_regime(opts.regime);
    let alternate = fit_regime(opts.regime.other());
    let (primary, alternate) = match (primary, alternate) {
        (Some(p), a) => (p, a),
        (None, Some(_)) => {
            return Err(Error::Fit(format!("no {:?}-coupled solution converged; the other regime did", opts.regime)));
        }
        (None, None) => return Err(Error::Fit("no start converged".into())),
    };
    let degenerate = alternate.as_ref().is_some_and(|a| {
        let scale = primary.sse.max(a.sse).max(1e-300);
        (primary.sse - a.sse).abs() / scale < opts.degeneracy_tol || (primary.sse < 1e-20 && a.sse < 1e-20)
    });
    Ok(ResonanceFit { primary, alternate, degenerate })
}

/// Linear tuning maps of the defect-mode wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    /// `d lambda / d delta_phi` (nm/rad).
    pub nm_per_rad: f64,
    /// Anchor `(delta_phi_ref, lambda_ref_nm)` of the phase map.
    pub reference: (f64, f64),
    pub r2_phase: f64,
    /// `d lambda / d p_heat` (nm/mW) and the wavelength at zero heater power.
    pub nm_per_mw: Option<f64>,
    pub heater_intercept_nm: Option<f64>,
    pub r2_heater: Option<f64>,
}

impl CalibrationMap {
    pub fn wavelength_at_phase(&self, delta_phi: f64) -> f64 {
        self.reference.1 + self.nm_per_rad * (delta_phi - self.reference.0)
    }

    pub fn phase_at_wavelength(&self, lambda_nm: f64) -> f64 {
        self.reference.0 + (lambda_nm - self.reference.1) / self.nm_per_rad
    }

    /// Heater power to phase detune through the common wavelength.
    pub fn phase_at_heater(&self, p_mw: f64) -> Option<f64> {
        Some(self.phase_at_wavelength(self.heater_intercept_nm? + self.nm_per_mw? * p_mw))
    }
}

fn fit_line(samples: &[(f64, f64)], what: &str) -> Result<crate::numerics::LinearFit> {
    if samples.len() < 2 {
        return Err(Error::Fit(format!("{what}: need at least two samples")));
    }
    let x: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let span = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(span > 0.0) {
        return Err(Error::Fit(format!("{what}: samples do not span a range")));
    }
    linear_fit(&x, &y)
}

/// Least-squares maps from `(delta_phi rad, lambda nm)` and optional
/// `(p_heat mW, lambda nm)` samples. With `anchor`, the phase map is shifted
/// to pass through it while keeping the fitted slope.
pub fn calibrate_phase(phase_samples: &[(f64, f64)], heater_samples: &[(f64, f64)], anchor: Option<(f64, f64)>) -> Result<CalibrationMap> {
    let lf = fit_line(phase_samples, "phase map")?;
    if lf.slope == 0.0 {
        return Err(Error::Fit("phase map has zero slope".into()));
    }
    let reference = match anchor {
        Some(a) => a,
        None => {
            let x0 = phase_samples[0].0;
            (x0, lf.eval(x0))
        }
    };
    let heater = if heater_samples.is_empty() { None } else { Some(fit_line(heater_samples, "heater map")?) };
    Ok(CalibrationMap {
        nm_per_rad: lf.slope,
        reference,
        r2_phase: lf.r_squared,
        nm_per_mw: heater.as_ref().map(|h| h.slope),
        heater_intercept_nm: heater.as_ref().map(|h| h.intercept),
        r2_heater: heater.as_ref().map(|h| h.r_squared),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(p: &ResonanceParams, half_widths: f64, n: usize) -> Vec<f64> {
        crate::numerics::linspace(p.omega0 - half_widths * p.kappa(), p.omega0 + half_widths * p.kappa(), n)
    }

    #[test]
    fn critical_coupling_extinguishes() {
        let p = ResonanceParams::from_q(1545.0, 1e5, 1e5);
        let t = kerr_t0(&p, p.omega0, 1e-3, None).unwrap();
        assert!(t.t0.norm() < 1e-12);
    }

    #[test]
    fn linear_dip_has_fwhm_kappa() {
        let p = ResonanceParams::from_q(1545.0, 9e4, 1.8e5);
        let tmin = kerr_t0(&p, p.omega0, 0.0, None).unwrap().t0.norm_sqr();
        let half = 0.5 * (1.0 + tmin);
        let at = |w: f64| kerr_t0(&p, w, 0.0, None).unwrap().t0.norm_sqr();
        let edge = p.omega0 + 0.5 * p.kappa();
        assert!((at(edge) - half).abs() < 1e-9);
        assert!((at(2.0 * p.omega0 - edge) - half).abs() < 1e-9);
    }

    #[test]
    fn kerr_cubic_roots_satisfy_equation() {
        let mut p = ResonanceParams::from_q(1545.0, 1e5, 1e5);
        p.g_nl = 1e4;
        for k in -20..=5 {
            let w = p.omega0 + k as f64 * 0.5 * p.kappa();
            let s = 5e-3 / (HBAR * w);
            for n in kerr_photon_numbers(&p, w, 5e-3) {
                let lhs = n * (0.25 * p.kappa().powi(2) + (w - p.omega0 + 2.0 * p.g_nl * n).powi(2));
                assert!((lhs / (p.kappa_ext * s) - 1.0).abs() < 1e-9, "k {k} n {n} {}", lhs / (p.kappa_ext * s));
            }
        }
    }

    #[test]
    fn kerr_shifts_dip_by_two_g_n() {
        let mut p = ResonanceParams::from_q(1545.0, 1e5, 1e5);
        p.g_nl = 1e4;
        let power = 2e-4;
        let w = grid(&p, 3.0, 6001);
        let pts = kerr_sweep(&p, &w, power, SweepDirection::UpInWavelength).unwrap();
        assert!(pts.iter().all(|q| !q.bistable));
        let k = (0..pts.len()).min_by(|&a, &b| pts[a].t0.norm().total_cmp(&pts[b].t0.norm())).unwrap();
        let shift = pts[k].omega - p.omega0;
        let want = -2.0 * p.g_nl * pts[k].n;
        assert!(want.abs() > 0.05 * p.kappa());
        assert!((shift - want).abs() < 2.0 * (w[1] - w[0]), "{shift} vs {want}");
    }

    #[test]
    fn kerr_bistability_and_branches() {
        let mut p = ResonanceParams::from_q(1545.0, 1e5, 1e5);
        p.g_nl = 1e4;
        let w = grid(&p, 12.0, 2001);
        let power = 5e-3;
        let up = kerr_sweep(&p, &w, power, SweepDirection::UpInWavelength).unwrap();
        let down = kerr_sweep(&p, &w, power, SweepDirection::DownInWavelength).unwrap();
        assert!(up.iter().any(|q| q.bistable));
        let hysteresis = up.iter().zip(&down).filter(|(a, b)| (a.n - b.n).abs() > 1e-6 * a.n.max(b.n)).count();
        assert!(hysteresis > 0);
        // The up-in-wavelength sweep rides the high branch towards lower frequency.
        let max_up = up.iter().map(|q| q.n).fold(0.0, f64::max);
        let max_down = down.iter().map(|q| q.n).fold(0.0, f64::max);
        assert!(max_up > max_down);
    }

    #[test]
    fn kerr_limit_is_linear() {
        let lin = ResonanceParams::from_q(1545.0, 9e4, 1.8e5);
        let kerr = ResonanceParams { g_nl: 1e4, ..lin };
        let w = grid(&lin, 10.0, 401);
        let a = kerr_sweep(&lin, &w, 1e-15, SweepDirection::UpInWavelength).unwrap();
        let b = kerr_sweep(&kerr, &w, 1e-15, SweepDirection::UpInWavelength).unwrap();
        let sup = a.iter().zip(&b).map(|(x, y)| (x.t0 - y.t0).norm()).fold(0.0, f64::max);
        assert!(sup <= 1e-8, "{sup}");
    }

    #[test]
    fn facet_limits() {
        let mut p = ResonanceParams::from_q(1545.0, 9e4, 1.8e5);
        p.facet = Facet { t1: 0.9, t2: 0.8, ..Facet::none() };
        let w = p.omega0 + 0.3 * p.kappa();
        let t0 = kerr_t0(&p, w, 0.0, None).unwrap().t0;
        assert!((facet_transmission(&p, w, 0.0).unwrap() - 0.5184 * t0.norm_sqr()).abs() < 1e-12);
        // Airy fringes with T0 = 1.
        let r = 0.3;
        let f = Facet { r1: C64::new(r, 0.0), r2: C64::new(r, 0.0), t1: (1.0 - r * r).sqrt(), t2: (1.0 - r * r).sqrt(), phi: 0.0, delay_s: 0.0 };
        let one = C64::new(1.0, 0.0);
        assert!((facet_from_t0(&f, one, 0.0).unwrap() - 1.0).abs() < 1e-12);
        let min = (1.0 - r * r).powi(2) / (1.0 + r * r).powi(2);
        assert!((facet_from_t0(&f, one, std::f64::consts::PI).unwrap() - min).abs() < 1e-12);
        let bad = Facet { r1: C64::new(1.0, 0.0), r2: C64::new(1.0, 0.0), t1: 0.0, t2: 0.0, ..Facet::none() };
        assert!(facet_from_t0(&bad, one, 0.0).is_err());
    }

    #[test]
    fn q_compose_examples() {
        assert!((q_compose(2e4, 2e4).unwrap() - 1e4).abs() < 1e-9);
        assert!((q_compose(95050.0, 186120.0).unwrap() - 62918.0).abs() < 0.5);
        assert!((q_compose(30966.0, 143542.0).unwrap() - 25471.0).abs() <= 1.0);
        assert!(q_compose(0.0, 1.0).is_err());
    }

    #[test]
    fn table_satisfies_reciprocal_identity() {
        for row in Q_TABLE {
            for [qt, qe, qi] in [row.idler, row.signal] {
                assert!(q_identity_residual(qt, qe, qi).unwrap() < 0.005, "row {}", row.fsr);
            }
        }
    }

    fn synth(p: &ResonanceParams, n: usize) -> (Vec<f64>, Vec<f64>) {
        let w = grid(p, 8.0, n);
        let t = facet_spectrum(p, &w, 0.0, SweepDirection::UpInWavelength).unwrap();
        (w.iter().map(|&x| crate::constants::nm_from_omega(x)).collect(), t)
    }

    #[test]
    fn noiseless_fit_recovers_table_row() {
        let p = ResonanceParams::from_q(1545.0, 95050.0, 186120.0);
        let (l, t) = synth(&p, 401);
        // Q_e < Q_i: this row is over-coupled.
        let fit = fit_resonance(&l, &t, &FitOptions { regime: CouplingRegime::Over, ..FitOptions::default() }).unwrap();
        let f = fit.primary;
        assert_eq!(f.regime, CouplingRegime::Over);
        assert!((f.q_t / 62918.0 - 1.0).abs() < 1e-3);
        assert!((f.q_e / 95050.0 - 1.0).abs() < 1e-6 && (f.q_i / 186120.0 - 1.0).abs() < 1e-6);
        assert!(f.rel_rms < 1e-6);
        assert!(fit.degenerate);
        let alt = fit.alternate.unwrap();
        assert!((alt.q_e / 186120.0 - 1.0).abs() < 1e-6);
        let under = fit_resonance(&l, &t, &FitOptions::default()).unwrap();
        assert!((under.primary.q_i / 95050.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fit_with_facet_round_trips() {
        let mut p = ResonanceParams::from_q(1545.0, 120000.0, 80000.0);
        let r: f64 = 0.25;
        let t = (1.0 - r * r).sqrt();
        p.facet = Facet { r1: C64::new(r, 0.0), r2: C64::new(r, 0.0), t1: t, t2: t, phi: 0.8, delay_s: 0.0 };
        let (l, tr) = synth(&p, 481);
        let fit = fit_resonance(&l, &tr, &FitOptions { fit_facet: true, ..FitOptions::default() }).unwrap().primary;
        assert!(fit.rel_rms < 1e-6, "{}", fit.rel_rms);
        assert!((fit.q_t / p.q_t() - 1.0).abs() < 1e-5);
        let w: Vec<f64> = l.iter().map(|&x| omega_from_nm(x)).collect();
        let back = facet_spectrum(&fit.params, &w, 0.0, SweepDirection::UpInWavelength).unwrap();
        let rms = (back.iter().zip(&tr).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / tr.len() as f64).sqrt();
        assert!(rms < 1e-6);
    }

    #[test]
    fn undersampled_spectrum_is_rejected() {
        let p = ResonanceParams::from_q(1545.0, 95050.0, 186120.0);
        let (l, t) = synth(&p, 41);
        assert!(fit_resonance(&l, &t, &FitOptions::default()).is_err());
    }

    #[test]
    fn calibration_maps() {
        let map = calibrate_phase(&[(1.0, 1545.0), (2.0, 1546.0)], &[], None).unwrap();
        assert!((map.nm_per_rad - 1.0).abs() < 1e-12);
        assert!((map.wavelength_at_phase(3.0) - 1547.0).abs() < 1e-9);
        let anchored = calibrate_phase(&[(1.0, 1545.0), (2.0, 1546.0), (3.0, 1547.0)], &[], Some((2.37 * std::f64::consts::PI, 1545.265))).unwrap();
        assert!((anchored.wavelength_at_phase(2.37 * std::f64::consts::PI) - 1545.265).abs() < 1e-12);
        let heat = calibrate_phase(&[(1.0, 1545.0), (2.0, 1546.0)], &[(7.0, 1545.0), (27.0, 1547.0)], None).unwrap();
        assert!((heat.nm_per_mw.unwrap() - 0.1).abs() < 1e-12);
        assert!((heat.phase_at_heater(17.0).unwrap() - 2.0).abs() < 1e-9);
        assert!(calibrate_phase(&[(1.0, 1545.0), (1.0, 1546.0)], &[], None).is_err());
    }
}

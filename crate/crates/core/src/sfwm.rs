//! Spontaneous four-wave mixing in a single resonance coupled to a bus.
//!
//! The pump is a classical steady-state field; signal and idler obey linear
//! Langevin equations coupled by `G = g_nl alpha_p^2`. A signal photon at
//! `omega` pairs with an idler at `2 omega_p - omega`, where `omega_p` is the
//! pump resonance. All rates are per second and all frequencies are angular.

use serde::{Deserialize, Serialize};

use crate::constants::{omega_from_nm, EPSILON_0, HBAR};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::numerics::simpson;

/// One resonance: frequency and decay rates (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub omega: f64,
    pub kappa_ext: f64,
    pub kappa_int: f64,
}

impl Mode {
    pub fn kappa(&self) -> f64 {
        self.kappa_ext + self.kappa_int
    }

    /// Mode from quality factors, `kappa = omega / Q`.
    pub fn from_q(omega: f64, q_ext: f64, q_int: f64) -> Self {
        let inv = |q: f64| if q.is_infinite() { 0.0 } else { omega / q };
        Self { omega, kappa_ext: inv(q_ext), kappa_int: inv(q_int) }
    }

    pub fn q_loaded(&self) -> f64 {
        self.omega / self.kappa()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name}: omega must be positive")));
        }
        if !(self.kappa_ext >= 0.0 && self.kappa_int >= 0.0 && self.kappa() > 0.0 && self.kappa().is_finite()) {
            return Err(Error::InvalidParameter(format!("{name}: decay rates must be non-negative with a positive sum")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeParams {
    pub pump: Mode,
    pub signal: Mode,
    pub idler: Mode,
}

impl ModeParams {
    pub fn validate(&self) -> Result<()> {
        self.pump.validate("pump")?;
        self.signal.validate("signal")?;
        self.idler.validate("idler")
    }

    /// Energy mismatch `2 omega_p - omega_s - omega_i`.
    pub fn mismatch(&self) -> f64 {
        2.0 * self.pump.omega - self.signal.omega - self.idler.omega
    }

    /// Equal decay rates on all three modes with `kappa_ext = kappa / 2`.
    pub fn is_symmetric_critical(&self) -> bool {
        let k = self.pump.kappa();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * k;
        [self.pump, self.signal, self.idler]
            .iter()
            .all(|m| close(m.kappa(), k) && close(m.kappa_ext, 0.5 * m.kappa()))
            && self.mismatch().abs() <= 1e-12 * self.pump.omega
    }

    /// Three equal-Q critically coupled modes with the signal and idler placed
    /// symmetrically in frequency about the pump.
    pub fn symmetric_critical(pump_omega: f64, pair_offset: f64, q_loaded: f64) -> Self {
        let m = |w: f64| Mode::from_q(w, 2.0 * q_loaded, 2.0 * q_loaded);
        Self { pump: m(pump_omega), signal: m(pump_omega + pair_offset), idler: m(pump_omega - pair_offset) }
    }
}

/// Quality factors of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeQ {
    pub q_ext: f64,
    pub q_int: f64,
}

/// Wavelength-domain description of a phase-matched mode triplet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSetup {
    pub pump_lambda_nm: f64,
    /// Signal-pump wavelength spacing; the idler is placed by energy conservation.
    pub pair_spacing_nm: f64,
    pub pump: ModeQ,
    pub signal: ModeQ,
    pub idler: ModeQ,
}

impl ModeSetup {
    pub fn modes(&self) -> Result<ModeParams> {
        if !(self.pump_lambda_nm > 0.0 && self.pair_spacing_nm >= 0.0 && self.pair_spacing_nm < self.pump_lambda_nm) {
            return Err(Error::InvalidParameter("pump wavelength and pair spacing out of range".into()));
        }
        for q in [self.pump, self.signal, self.idler] {
            if !(q.q_ext > 0.0 && q.q_int > 0.0) {
                return Err(Error::InvalidParameter("quality factors must be positive".into()));
            }
        }
        let wp = omega_from_nm(self.pump_lambda_nm);
        let ws = omega_from_nm(self.pump_lambda_nm - self.pair_spacing_nm);
        let wi = 2.0 * wp - ws;
        let m = ModeParams {
            pump: Mode::from_q(wp, self.pump.q_ext, self.pump.q_int),
            signal: Mode::from_q(ws, self.signal.q_ext, self.signal.q_int),
            idler: Mode::from_q(wi, self.idler.q_ext, self.idler.q_int),
        };
        m.validate()?;
        Ok(m)
    }
}

/// `g_nl = 3 hbar omega_p^2 chi3 / (4 eps0 n^4 V)` (rad/s).
pub fn g_nl_from_chi3(chi3_m2_per_v2: f64, mode_volume_m3: f64, n_bar: f64, omega_p: f64) -> Result<f64> {
    if !(chi3_m2_per_v2 >= 0.0 && mode_volume_m3 > 0.0 && n_bar > 0.0 && omega_p > 0.0) {
        return Err(Error::InvalidParameter("chi3 >= 0 and positive volume, index and frequency required".into()));
    }
    Ok(3.0 * HBAR * omega_p * omega_p * chi3_m2_per_v2 / (4.0 * EPSILON_0 * n_bar.powi(4) * mode_volume_m3))
}

/// Continuous-wave pump in the bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpDrive {
    pub power_w: f64,
    pub omega_laser: f64,
}

impl PumpDrive {
    fn validate(&self) -> Result<()> {
        if !(self.power_w >= 0.0 && self.power_w.is_finite() && self.omega_laser > 0.0) {
            return Err(Error::InvalidParameter("pump power must be >= 0 and laser frequency > 0".into()));
        }
        Ok(())
    }
}

/// Intra-cavity pump amplitude `alpha_p` (sqrt of photon number) at the laser frequency.
pub fn pump_amplitude(drive: &PumpDrive, pump: &Mode) -> f64 {
    let alpha_in2 = drive.power_w / (HBAR * pump.omega);
    let d = drive.omega_laser - pump.omega;
    (pump.kappa_ext / (d * d + 0.25 * pump.kappa() * pump.kappa()) * alpha_in2).sqrt()
}

/// Effective parametric coupling `G = g_nl alpha_p^2` (rad/s).
pub fn parametric_gain(modes: &ModeParams, drive: &PumpDrive, g_nl: f64) -> f64 {
    g_nl * pump_amplitude(drive, &modes.pump).powi(2)
}

/// On-resonance pump power at which `G^2 = fraction * kappa_s kappa_i`.
pub fn power_for_gain_ratio(modes: &ModeParams, g_nl: f64, fraction: f64) -> Result<f64> {
    modes.validate()?;
    if !(g_nl > 0.0 && fraction > 0.0) {
        return Err(Error::InvalidParameter("g_nl and fraction must be positive".into()));
    }
    let unit = PumpDrive { power_w: 1.0, omega_laser: modes.pump.omega };
    let g1 = parametric_gain(modes, &unit, g_nl);
    Ok((fraction * modes.signal.kappa() * modes.idler.kappa()).sqrt() / g1)
}

/// Inverse susceptibility `chi_j(omega) = -i (omega - omega_j) + kappa_j / 2`.
pub fn susceptibility(mode: &Mode, omega: f64) -> C64 {
    C64::new(0.5 * mode.kappa(), -(omega - mode.omega))
}

/// Errors if `G` reaches the parametric threshold guard `0.5 sqrt(kappa_s kappa_i)`.
pub fn check_threshold(modes: &ModeParams, g: f64) -> Result<()> {
    let limit = 0.5 * (modes.signal.kappa() * modes.idler.kappa()).sqrt();
    if !(g.is_finite() && g >= 0.0) {
        return Err(Error::InvalidParameter(format!("G = {g}")));
    }
    if g >= limit {
        return Err(Error::Threshold { omega: modes.pump.omega, detail: format!("G = {g:e} >= {limit:e}") });
    }
    Ok(())
}

/// Largest `G^2 / (kappa_s kappa_i)` accepted by the closed forms.
pub const WEAK_PUMPING_RATIO: f64 = 0.01;

/// Errors unless `G^2 < WEAK_PUMPING_RATIO kappa_s kappa_i`.
pub fn check_weak_pumping(modes: &ModeParams, g: f64) -> Result<()> {
    let ks_ki = modes.signal.kappa() * modes.idler.kappa();
    if g * g >= WEAK_PUMPING_RATIO * ks_ki {
        return Err(Error::NotWeakPumping(format!(
            "G^2 / (kappa_s kappa_i) = {:.3e}; use the numeric pair rate",
            g * g / ks_ki
        )));
    }
    Ok(())
}

/// Input-output matrices at signal frequency `omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MnMatrices {
    pub m: [[C64; 2]; 2],
    pub n: [[C64; 2]; 2],
}

/// `M` and `N` at signal frequency `omega` with the idler at `2 omega_p - omega`.
pub fn mn_matrices(modes: &ModeParams, g: f64, omega: f64) -> Result<MnMatrices> {
    let chi_s = susceptibility(&modes.signal, omega);
    let chi_i_bar = susceptibility(&modes.idler, 2.0 * modes.pump.omega - omega).conj();
    let den = chi_s * chi_i_bar - g * g;
    let scale = (chi_s * chi_i_bar).norm();
    if den.norm() <= 1e-9 * scale || !den.re.is_finite() {
        return Err(Error::Threshold { omega, detail: "chi_s conj(chi_i) - G^2 vanishes".into() });
    }
    let ig = C64::new(0.0, g);
    let build = |ks: f64, ki: f64| {
        let (a, b) = (ks.sqrt(), ki.sqrt());
        [[a * chi_i_bar / den, ig * b / den], [-ig * a / den, b * chi_s / den]]
    };
    Ok(MnMatrices {
        m: build(modes.signal.kappa_ext, modes.idler.kappa_ext),
        n: build(modes.signal.kappa_int, modes.idler.kappa_int),
    })
}

/// Two-photon amplitudes on a signal-frequency grid; `zeta00` omits the
/// vacuum delta term.
#[derive(Debug, Clone, PartialEq)]
pub struct BiphotonAmplitudes {
    pub omega: Vec<f64>,
    pub g: f64,
    pub zeta00: Vec<C64>,
    pub zeta11: Vec<C64>,
    pub zeta10: Vec<C64>,
    pub zeta01: Vec<C64>,
    pub eta: Vec<C64>,
}

fn amplitudes_at(mn: &MnMatrices, g: f64) -> [C64; 5] {
    let (m, n) = (&mn.m, &mn.n);
    let ig = C64::new(0.0, g);
    let z00 = -ig * (m[0][1].conj() * m[1][1] + n[0][1].conj() * n[1][1] + m[0][0] * m[1][0].conj() + n[0][0] * n[1][0].conj());
    let z11 = ig * (m[0][0].conj() * m[1][1] + m[0][1] * m[1][0].conj());
    let z10 = ig * (m[0][0].conj() * n[1][1] + n[0][1] * m[1][0].conj());
    let z01 = ig * (n[0][0].conj() * m[1][1] + m[0][1] * n[1][0].conj());
    let eta = ig * (n[0][0].conj() * n[1][1] + n[0][1] * n[1][0].conj());
    [z00, z11, z10, z01, eta]
}

pub fn zeta_amplitudes(modes: &ModeParams, drive: &PumpDrive, g_nl: f64, omega: &[f64]) -> Result<BiphotonAmplitudes> {
    modes.validate()?;
    drive.validate()?;
    let g = parametric_gain(modes, drive, g_nl);
    check_threshold(modes, g)?;
    let mut out = BiphotonAmplitudes {
        omega: omega.to_vec(),
        g,
        zeta00: Vec::with_capacity(omega.len()),
        zeta11: Vec::with_capacity(omega.len()),
        zeta10: Vec::with_capacity(omega.len()),
        zeta01: Vec::with_capacity(omega.len()),
        eta: Vec::with_capacity(omega.len()),
    };
    for &w in omega {
        let a = amplitudes_at(&mn_matrices(modes, g, w)?, g);
        out.zeta00.push(a[0]);
        out.zeta11.push(a[1]);
        out.zeta10.push(a[2]);
        out.zeta01.push(a[3]);
        out.eta.push(a[4]);
    }
    Ok(out)
}

/// Uniform signal-frequency grid used by the quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureOptions {
    /// Half-width in units of the largest signal/idler linewidth.
    pub half_width_kappas: f64,
    /// Initial odd point count.
    pub points: usize,
    /// Minimum samples per smallest linewidth.
    pub points_per_kappa: f64,
    /// Relative change that ends refinement doubling.
    pub rel_tol: f64,
    pub max_doublings: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { half_width_kappas: 20.0, points: 4001, points_per_kappa: 20.0, rel_tol: 1e-3, max_doublings: 6 }
    }
}

/// Signal grid centred between the signal resonance and the idler image.
pub fn signal_grid(modes: &ModeParams, opts: &QuadratureOptions, points: usize) -> Vec<f64> {
    let (ks, ki) = (modes.signal.kappa(), modes.idler.kappa());
    let image = 2.0 * modes.pump.omega - modes.idler.omega;
    let center = 0.5 * (modes.signal.omega + image);
    let half = opts.half_width_kappas * ks.max(ki) + 0.5 * (image - modes.signal.omega).abs();
    crate::numerics::linspace(center - half, center + half, points)
}

fn initial_points(modes: &ModeParams, opts: &QuadratureOptions) -> usize {
    let grid = signal_grid(modes, opts, 3);
    let span = grid[2] - grid[0];
    let kmin = modes.signal.kappa().min(modes.idler.kappa());
    let need = (opts.points_per_kappa * span / kmin).ceil() as usize + 1;
    let n = opts.points.max(need).max(3);
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

/// Integrated probabilities of the four output channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRates {
    /// Pair rate `N_c`.
    pub pairs: f64,
    /// Signal singles `N_s` from `zeta10`.
    pub signal: f64,
    /// Idler singles `N_i` from `zeta01`.
    pub idler: f64,
    /// Both photons lost, from `eta`.
    pub lost: f64,
    /// Grid points of the converged quadrature.
    pub points: usize,
}

fn integrate(modes: &ModeParams, g: f64, opts: &QuadratureOptions, n: usize) -> Result<[f64; 4]> {
    let grid = signal_grid(modes, opts, n);
    let h = grid[1] - grid[0];
    let mut f: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
    for &w in &grid {
        let a = amplitudes_at(&mn_matrices(modes, g, w)?, g);
        for (k, v) in [a[1], a[2], a[3], a[4]].iter().enumerate() {
            f[k].push(v.norm_sqr());
        }
    }
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = simpson(&f[k], h)?;
    }
    Ok(out)
}

/// Quadrature of `|zeta|^2` over the signal frequency, refined by doubling
/// until the pair rate changes by less than `opts.rel_tol`.
pub fn channel_rates_numeric(modes: &ModeParams, drive: &PumpDrive, g_nl: f64, opts: &QuadratureOptions) -> Result<ChannelRates> {
    modes.validate()?;
    drive.validate()?;
    let g = parametric_gain(modes, drive, g_nl);
    check_threshold(modes, g)?;
    if g == 0.0 {
        return Ok(ChannelRates { pairs: 0.0, signal: 0.0, idler: 0.0, lost: 0.0, points: 0 });
    }
    let mut n = initial_points(modes, opts);
    let mut prev = integrate(modes, g, opts, n)?;
    for _ in 0..opts.max_doublings {
        let n2 = 2 * n - 1;
        let next = integrate(modes, g, opts, n2)?;
        let change = (next[0] - prev[0]).abs() / next[0].abs().max(f64::MIN_POSITIVE);
        n = n2;
        prev = next;
        if change < opts.rel_tol {
            return Ok(ChannelRates { pairs: prev[0], signal: prev[1], idler: prev[2], lost: prev[3], points: n });
        }
    }
    Err(Error::Quadrature(format!("pair rate not converged after {} doublings ({n} points)", opts.max_doublings)))
}

/// `N_c = integral |zeta11|^2 d omega`.
pub fn pair_rate_numeric(modes: &ModeParams, drive: &PumpDrive, g_nl: f64, opts: &QuadratureOptions) -> Result<f64> {
    channel_rates_numeric(modes, drive, g_nl, opts).map(|r| r.pairs)
}

/// Lorentzian-overlap factor `8 pi G^2 / (kappa_s kappa_i) (ks + ki) / ((ks + ki)^2 + 4 d^2)`.
fn overlap(modes: &ModeParams, g: f64) -> f64 {
    let (ks, ki) = (modes.signal.kappa(), modes.idler.kappa());
    let d = modes.mismatch();
    8.0 * std::f64::consts::PI * g * g * (ks + ki) / (ks * ki * ((ks + ki).powi(2) + 4.0 * d * d))
}

/// Weak-pumping pair rate
/// `N_c = 8 pi G^2 ks_ext ki_ext (ks + ki) / (ks ki ((ks + ki)^2 + 4 d^2))`.
/// For symmetric critical coupling this is `4 pi g^2 P^2 / ((hbar omega_p)^2 kappa^3)`.
pub fn pair_rate_closed_form(modes: &ModeParams, drive: &PumpDrive, g_nl: f64) -> Result<f64> {
    modes.validate()?;
    drive.validate()?;
    let g = parametric_gain(modes, drive, g_nl);
    check_threshold(modes, g)?;
    check_weak_pumping(modes, g)?;
    Ok(overlap(modes, g) * modes.signal.kappa_ext * modes.idler.kappa_ext)
}

/// Weak-pumping singles `(N_s, N_i)`: one photon of the pair exits and the
/// partner is lost.
pub fn single_rates(modes: &ModeParams, drive: &PumpDrive, g_nl: f64) -> Result<(f64, f64)> {
    modes.validate()?;
    drive.validate()?;
    let g = parametric_gain(modes, drive, g_nl);
    check_threshold(modes, g)?;
    check_weak_pumping(modes, g)?;
    let o = overlap(modes, g);
    Ok((o * modes.signal.kappa_ext * modes.idler.kappa_int, o * modes.signal.kappa_int * modes.idler.kappa_ext))
}

/// Closed-form `(N_c, N_s, N_i)`.
pub fn intrinsic_rates(modes: &ModeParams, drive: &PumpDrive, g_nl: f64) -> Result<(f64, f64, f64)> {
    let nc = pair_rate_closed_form(modes, drive, g_nl)?;
    let (ns, ni) = single_rates(modes, drive, g_nl)?;
    Ok((nc, ns, ni))
}

/// Pair-rate ratio of two configurations under the same drive power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QEnhancement {
    pub ratio: f64,
    /// `(Q / Q_ref)^3` when both configurations are symmetric and critically coupled.
    pub cube_law: Option<f64>,
}

/// `N_c(modes) / N_c(reference)` with each pump driven on resonance at `power_w`.
pub fn q_enhancement(modes: &ModeParams, reference: &ModeParams, power_w: f64, g_nl: f64) -> Result<QEnhancement> {
    let rate = |m: &ModeParams| {
        let drive = PumpDrive { power_w, omega_laser: m.pump.omega };
        pair_rate_closed_form(m, &drive, g_nl)
    };
    let (a, b) = (rate(modes)?, rate(reference)?);
    if b <= 0.0 {
        return Err(Error::InvalidParameter("reference pair rate is zero".into()));
    }
    let ratio = a / b;
    let cube_law = (modes.is_symmetric_critical() && reference.is_symmetric_critical())
        .then(|| (modes.pump.q_loaded() / reference.pump.q_loaded()).powi(3));
    if let Some(c) = cube_law {
        if ((ratio - c) / c).abs() > 1e-3 {
            return Err(Error::InvalidParameter(format!("pair-rate ratio {ratio} departs from the cube law {c}")));
        }
    }
    Ok(QEnhancement { ratio, cube_law })
}

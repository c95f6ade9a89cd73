//! Detected count rates, second-order correlations, CAR and synthetic
//! coincidence histograms.
//!
//! The coincidence peak is a Gaussian of standard deviation `delta` with
//! area equal to the detected pair rate; accidentals form a flat floor
//! `N_s N_i` per unit delay.

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::numerics::linear_fit;
use crate::optim::{levenberg_marquardt, LmOptions};
use crate::rng::stream_rng;
use crate::sfwm::{intrinsic_rates, power_for_gain_ratio, ModeParams, ModeQ, ModeSetup, PumpDrive, WEAK_PUMPING_RATIO};

/// `FWHM / delta` for a Gaussian.
pub const FWHM_PER_DELTA: f64 = 2.354_820_045_030_949_3;

/// Efficiencies, dark counts (Hz) and pump leakage (counts/s per W).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionChain {
    pub eta_s: f64,
    pub eta_i: f64,
    pub dark_s: f64,
    pub dark_i: f64,
    pub leak_s: f64,
    pub leak_i: f64,
}

impl DetectionChain {
    pub fn ideal() -> Self {
        Self { eta_s: 1.0, eta_i: 1.0, dark_s: 0.0, dark_i: 0.0, leak_s: 0.0, leak_i: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.eta_s, self.eta_i, self.dark_s, self.dark_i, self.leak_s, self.leak_i];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.eta_s > 1.0 || self.eta_i > 1.0 {
            return Err(Error::InvalidParameter("detection chain values must be >= 0 with efficiencies <= 1".into()));
        }
        Ok(())
    }
}

/// Generated rates leaving the chip: pairs and the two single channels (Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicRates {
    pub pairs: f64,
    pub signal: f64,
    pub idler: f64,
}

/// Rates at the detectors (Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedRates {
    /// True coincidences `eta_s eta_i N_c`.
    pub coincidences: f64,
    pub signal: f64,
    pub idler: f64,
}

pub fn detected_rates(intrinsic: &IntrinsicRates, chain: &DetectionChain, power_w: f64) -> Result<DetectedRates> {
    chain.validate()?;
    let i = intrinsic;
    if [i.pairs, i.signal, i.idler, power_w].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter("rates and power must be >= 0".into()));
    }
    Ok(DetectedRates {
        coincidences: chain.eta_s * chain.eta_i * i.pairs,
        signal: chain.eta_s * i.signal + chain.leak_s * power_w + chain.dark_s,
        idler: chain.eta_i * i.idler + chain.leak_i * power_w + chain.dark_i,
    })
}

/// `g_si(0) = N_c / (N_s N_i T_coin)` for measured coincidence and singles rates.
pub fn g2_cross_zero(coincidences: f64, signal: f64, idler: f64, t_coin: f64) -> Result<f64> {
    if !(t_coin > 0.0) {
        return Err(Error::InvalidParameter("coincidence window must be positive".into()));
    }
    if !(signal > 0.0 && idler > 0.0) {
        return Err(Error::InvalidParameter("singles rates must be positive".into()));
    }
    if !(coincidences >= 0.0) {
        return Err(Error::InvalidParameter("coincidence rate must be >= 0".into()));
    }
    Ok(coincidences / (signal * idler * t_coin))
}

/// `Gamma = g_si^2 / (g_ss g_ii)`.
pub fn nonclassicality_gamma(g_si0: f64, g_ss0: f64, g_ii0: f64) -> Result<f64> {
    if !(g_ss0 > 0.0 && g_ii0 > 0.0) {
        return Err(Error::InvalidParameter("auto-correlations must be positive".into()));
    }
    if !(g_si0 >= 0.0) {
        return Err(Error::InvalidParameter("cross-correlation must be >= 0".into()));
    }
    Ok(g_si0 * g_si0 / (g_ss0 * g_ii0))
}

/// Fraction of a centred Gaussian of standard deviation `delta` inside a window of full width `width`.
pub fn window_fraction(width: f64, delta: f64) -> f64 {
    erf(width / (2.0 * std::f64::consts::SQRT_2 * delta))
}

/// Expected-count correlation figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelCorrelations {
    /// Cross-correlation including the accidental floor, with every true coincidence counted.
    pub g2_si0: f64,
    pub g2_ss0: f64,
    pub g2_ii0: f64,
    pub gamma: f64,
    /// Window-limited coincidence-to-accidental ratio.
    pub car: f64,
    pub window_s: f64,
}

/// g2, Gamma and CAR from expected rates. The CAR window is centred on the peak.
pub fn model_correlations(rates: &DetectedRates, delta: f64, opts: &CorrelationOptions) -> Result<ModelCorrelations> {
    opts.validate()?;
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter("correlation width must be positive".into()));
    }
    let acc = rates.signal * rates.idler;
    let g2 = g2_cross_zero(rates.coincidences + acc * opts.t_coin, rates.signal, rates.idler, opts.t_coin)?;
    let window = opts.window_deltas * delta;
    let car = 1.0 + rates.coincidences * window_fraction(window, delta) / (acc * window);
    Ok(ModelCorrelations {
        g2_si0: g2,
        g2_ss0: opts.auto_correlation,
        g2_ii0: opts.auto_correlation,
        gamma: nonclassicality_gamma(g2, opts.auto_correlation, opts.auto_correlation)?,
        car,
        window_s: window,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("log-log slope needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    Ok(linear_fit(&lx, &ly)?.slope)
}

/// Analysis settings for correlations and CAR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationOptions {
    /// Coincidence bin for g2 (s).
    pub t_coin: f64,
    /// CAR window in units of the fitted `delta`.
    pub window_deltas: f64,
    /// Accidentals are taken from bins at least this many FWHM from the peak.
    pub floor_distance_fwhm: f64,
    /// Gaussian fit range, half-width in FWHM.
    pub fit_halfwidth_fwhm: f64,
    /// Width assumed when no peak is resolvable (s).
    pub fallback_delta: f64,
    /// Peak significance needed for a fit, in floor standard deviations.
    pub min_significance: f64,
    /// Auto-correlation value used for Gamma.
    pub auto_correlation: f64,
    /// Window widths (s) for the CAR-versus-window curve.
    pub curve_widths: Vec<f64>,
    /// Captured fraction of the net coincidences that defines saturation.
    pub saturation_fraction: f64,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        Self {
            t_coin: 100e-12,
            window_deltas: 3.0,
            floor_distance_fwhm: 10.0,
            fit_halfwidth_fwhm: 10.0,
            fallback_delta: 99.7e-12,
            min_significance: 6.0,
            auto_correlation: 1.0,
            curve_widths: (1..=60).map(|k| k as f64 * 50e-12).collect(),
            saturation_fraction: 0.99,
        }
    }
}

impl CorrelationOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.t_coin, self.window_deltas, self.floor_distance_fwhm, self.fit_halfwidth_fwhm, self.fallback_delta];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(self.auto_correlation > 0.0) {
            return Err(Error::InvalidParameter("correlation options must be positive".into()));
        }
        if !(self.saturation_fraction > 0.0 && self.saturation_fraction < 1.0) || self.curve_widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::InvalidParameter("saturation fraction in (0, 1) and positive curve widths required".into()));
        }
        Ok(())
    }
}

/// Delay histogram of signal-idler coincidences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    /// Bin centres (s).
    pub t: Vec<f64>,
    pub counts: Vec<u64>,
    pub bin_width: f64,
    pub acquisition_s: f64,
}

impl CoincidenceHistogram {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0 && self.acquisition_s > 0.0) || self.t.len() != self.counts.len() || self.t.len() < 3 {
            return Err(Error::InvalidParameter("histogram needs >= 3 bins, positive bin width and acquisition".into()));
        }
        Ok(())
    }

    /// Counts between `a` and `b`, splitting edge bins by overlap.
    pub fn counts_between(&self, a: f64, b: f64) -> f64 {
        let h = 0.5 * self.bin_width;
        self.t
            .iter()
            .zip(&self.counts)
            .map(|(&t, &c)| {
                let overlap = ((t + h).min(b) - (t - h).max(a)).max(0.0);
                c as f64 * overlap / self.bin_width
            })
            .sum()
    }
}

/// Binning and acquisition of a synthetic histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramSpec {
    /// Odd bin count, centred on zero delay.
    pub bins: usize,
    pub bin_width_s: f64,
    pub acquisition_s: f64,
    pub delta_true_s: f64,
    /// Delay of the peak (s).
    pub peak_offset_s: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self { bins: 2001, bin_width_s: 10e-12, acquisition_s: 60.0, delta_true_s: 99.7e-12, peak_offset_s: 0.0 }
    }
}

fn gauss_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Gaussian mass in a bin of width `bw` centred at `t`.
fn bin_mass(t: f64, bw: f64, t0: f64, delta: f64) -> f64 {
    gauss_cdf((t + 0.5 * bw - t0) / delta) - gauss_cdf((t - 0.5 * bw - t0) / delta)
}

/// Expected counts per bin.
pub fn histogram_mean(rates: &DetectedRates, spec: &HistogramSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if spec.bins < 3 || spec.bins % 2 == 0 || !(spec.bin_width_s > 0.0 && spec.acquisition_s > 0.0 && spec.delta_true_s > 0.0) {
        return Err(Error::InvalidParameter("histogram needs an odd bin count >= 3 and positive widths".into()));
    }
    if [rates.coincidences, rates.signal, rates.idler].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidParameter("rates must be >= 0".into()));
    }
    let half = (spec.bins / 2) as f64;
    let t: Vec<f64> = (0..spec.bins).map(|k| (k as f64 - half) * spec.bin_width_s).collect();
    let floor = rates.signal * rates.idler * spec.bin_width_s * spec.acquisition_s;
    let area = rates.coincidences * spec.acquisition_s;
    let mean = t.iter().map(|&x| floor + area * bin_mass(x, spec.bin_width_s, spec.peak_offset_s, spec.delta_true_s)).collect();
    Ok((t, mean))
}

/// Poisson-sampled histogram; stream 0 of `seed`.
pub fn synthetic_histogram(rates: &DetectedRates, spec: &HistogramSpec, seed: u64) -> Result<CoincidenceHistogram> {
    let (t, mean) = histogram_mean(rates, spec)?;
    let mut rng = stream_rng(seed, 0);
    let mut counts = Vec::with_capacity(mean.len());
    for &m in &mean {
        let c = if m > 0.0 {
            Poisson::new(m).map_err(|e| Error::InvalidParameter(format!("Poisson mean {m}: {e}")))?.sample(&mut rng) as u64
        } else {
            0
        };
        counts.push(c);
    }
    Ok(CoincidenceHistogram { t, counts, bin_width: spec.bin_width_s, acquisition_s: spec.acquisition_s })
}

/// Gaussian peak on a flat floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub t0: f64,
    pub delta: f64,
    pub fwhm: f64,
    /// Peak area (counts).
    pub area: f64,
    /// Fitted floor per bin.
    pub floor: f64,
    pub sigma_delta: Option<f64>,
    pub sigma_t0: Option<f64>,
    pub reduced_chi2: f64,
}

/// One point of the CAR-versus-window curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub width: f64,
    /// Raw counts in the window.
    pub counts: f64,
    /// Counts above the accidental floor.
    pub net: f64,
    pub car: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub t: Vec<f64>,
    /// Counts normalized by the accidental floor.
    pub g2_si: Vec<f64>,
    /// Cross-correlation in a `t_coin` window at the peak.
    pub g2_si0: f64,
    pub g2_ss0: f64,
    pub g2_ii0: f64,
    pub gamma: f64,
    pub car: f64,
    /// CAR window width (s).
    pub window: f64,
    /// Peak centre used for the windows (s).
    pub center: f64,
    /// Accidental counts per bin from the far bins.
    pub floor_per_bin: f64,
    pub fit: Option<GaussianFit>,
    pub car_curve: Vec<WindowPoint>,
    /// Smallest curve width capturing `saturation_fraction` of the net counts.
    pub saturation_width: Option<f64>,
}

fn far_floor(hist: &CoincidenceHistogram, center: f64, min_dist: f64) -> Result<f64> {
    let far: Vec<f64> = hist
        .t
        .iter()
        .zip(&hist.counts)
        .filter(|(t, _)| (**t - center).abs() >= min_dist)
        .map(|(_, &c)| c as f64)
        .collect();
    if far.is_empty() {
        return Err(Error::Fit(format!("no bins {min_dist:e} s from the peak for the accidental floor")));
    }
    Ok(far.iter().sum::<f64>() / far.len() as f64)
}

/// Half-maximum width around bin `k` above `base`, in bins.
fn half_max_width(counts: &[u64], k: usize, base: f64) -> f64 {
    let half = base + 0.5 * (counts[k] as f64 - base);
    let mut lo = k;
    while lo > 0 && counts[lo] as f64 > half {
        lo -= 1;
    }
    let mut hi = k;
    while hi + 1 < counts.len() && counts[hi] as f64 > half {
        hi += 1;
    }
    ((hi - lo) as f64).max(1.0)
}

fn fit_gaussian(hist: &CoincidenceHistogram, k: usize, fwhm_bins: f64, floor: f64, opts: &CorrelationOptions) -> Result<GaussianFit> {
    let bw = hist.bin_width;
    let t_peak = hist.t[k];
    let half = opts.fit_halfwidth_fwhm * fwhm_bins * bw;
    let idx: Vec<usize> = (0..hist.t.len()).filter(|&i| (hist.t[i] - t_peak).abs() <= half).collect();
    if idx.len() < 8 {
        return Err(Error::Fit(format!("only {} bins in the fit range", idx.len())));
    }
    // Work in bin units so all parameters are of order one or larger.
    let x: Vec<f64> = idx.iter().map(|&i| (hist.t[i] - t_peak) / bw).collect();
    let y: Vec<f64> = idx.iter().map(|&i| hist.counts[i] as f64).collect();
    let w: Vec<f64> = y.iter().map(|v| 1.0 / v.max(1.0).sqrt()).collect();
    let d0 = (fwhm_bins / FWHM_PER_DELTA).max(0.5);
    let a0 = ((hist.counts[k] as f64 - floor) * d0 * (2.0 * std::f64::consts::PI).sqrt()).max(1.0);
    let model = |p: &[f64], xi: f64| p[3] + p[0] * bin_mass(xi, 1.0, p[1], p[2].abs());
    let res = levenberg_marquardt(
        |p, r| {
            for i in 0..x.len() {
                r[i] = (model(p, x[i]) - y[i]) * w[i];
            }
        },
        &[a0, 0.0, d0, floor],
        x.len(),
        &LmOptions::default(),
    )?;
    let p = &res.params;
    let delta = p[2].abs() * bw;
    if !(p[0] > 0.0 && delta.is_finite() && delta > 0.0) || p[1].abs() > half / bw {
        return Err(Error::Fit(format!(
            "Gaussian fit diverged: area {:e}, centre {:e} bins, delta {:e} bins after {} iterations",
            p[0], p[1], p[2], res.iterations
        )));
    }
    let sig = res.sigmas();
    Ok(GaussianFit {
        t0: t_peak + p[1] * bw,
        delta,
        fwhm: FWHM_PER_DELTA * delta,
        area: p[0],
        floor: p[3],
        sigma_delta: sig.as_ref().map(|s| s[2] * bw),
        sigma_t0: sig.as_ref().map(|s| s[1] * bw),
        reduced_chi2: res.sse / (x.len() - 4).max(1) as f64,
    })
}

/// Fits the coincidence peak and evaluates g2, Gamma, CAR and the CAR-versus-window curve.
///
/// A histogram whose maximum does not exceed the floor by `min_significance`
/// standard deviations is treated as flat: no fit, windows centred at zero
/// delay with width from `fallback_delta`.
pub fn fit_peak_and_car(hist: &CoincidenceHistogram, opts: &CorrelationOptions) -> Result<CorrelationResult> {
    hist.validate()?;
    opts.validate()?;
    let bw = hist.bin_width;
    let k = (0..hist.counts.len()).max_by_key(|&i| (hist.counts[i], std::cmp::Reverse(i))).unwrap_or(0);
    let mut sorted: Vec<u64> = hist.counts.clone();
    sorted.sort_unstable();
    let base = sorted[sorted.len() / 2] as f64;
    let fwhm_bins = half_max_width(&hist.counts, k, base);
    let pre_floor = far_floor(hist, hist.t[k], opts.floor_distance_fwhm * fwhm_bins * bw).unwrap_or(base);
    let significant = hist.counts[k] as f64 - pre_floor >= opts.min_significance * pre_floor.max(1.0).sqrt();

    let (fit, center, delta) = if significant {
        let fit = fit_gaussian(hist, k, fwhm_bins, pre_floor, opts)?;
        (Some(fit), fit.t0, fit.delta)
    } else {
        (None, 0.0, opts.fallback_delta)
    };
    let floor = far_floor(hist, center, opts.floor_distance_fwhm * FWHM_PER_DELTA * delta)?;
    if !(floor > 0.0) {
        return Err(Error::Fit("accidental floor is zero; CAR undefined".into()));
    }
    let window_stats = |width: f64| {
        let counts = hist.counts_between(center - 0.5 * width, center + 0.5 * width);
        let acc = floor * width / bw;
        WindowPoint { width, counts, net: counts - acc, car: counts / acc }
    };
    let window = opts.window_deltas * delta;
    let car = window_stats(window).car;
    let g2_si0 = window_stats(opts.t_coin).car;
    let car_curve: Vec<WindowPoint> = opts.curve_widths.iter().map(|&w| window_stats(w)).collect();
    let saturation_width = if fit.is_some() {
        car_curve.last().and_then(|last| {
            let target = opts.saturation_fraction * last.net;
            car_curve.iter().find(|p| p.net >= target).map(|p| p.width)
        })
    } else {
        None
    };
    Ok(CorrelationResult {
        t: hist.t.clone(),
        g2_si: hist.counts.iter().map(|&c| c as f64 / floor).collect(),
        g2_si0,
        g2_ss0: opts.auto_correlation,
        g2_ii0: opts.auto_correlation,
        gamma: nonclassicality_gamma(g2_si0, opts.auto_correlation, opts.auto_correlation)?,
        car,
        window,
        center,
        floor_per_bin: floor,
        fit,
        car_curve,
        saturation_width,
    })
}

/// Pair source plus detection chain evaluated with the closed-form rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub modes: ModeParams,
    pub g_nl: f64,
    pub chain: DetectionChain,
    /// Correlation width of the coincidence peak (s).
    pub delta: f64,
}

/// Which transport channel pumps the pair source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourcePath {
    /// Pump on the defect-mode resonance.
    Fdmr,
    /// Pump on an edge state with no resonant enhancement; pair generation is neglected.
    Edge,
}

impl SourceModel {
    pub fn intrinsic(&self, power_w: f64, path: SourcePath) -> Result<IntrinsicRates> {
        match path {
            SourcePath::Fdmr => {
                let drive = PumpDrive { power_w, omega_laser: self.modes.pump.omega };
                let (pairs, signal, idler) = intrinsic_rates(&self.modes, &drive, self.g_nl)?;
                Ok(IntrinsicRates { pairs, signal, idler })
            }
            SourcePath::Edge => Ok(IntrinsicRates { pairs: 0.0, signal: 0.0, idler: 0.0 }),
        }
    }

    pub fn detected(&self, power_w: f64, path: SourcePath) -> Result<DetectedRates> {
        detected_rates(&self.intrinsic(power_w, path)?, &self.chain, power_w)
    }

    pub fn correlations(&self, power_w: f64, path: SourcePath, opts: &CorrelationOptions) -> Result<ModelCorrelations> {
        model_correlations(&self.detected(power_w, path)?, self.delta, opts)
    }

    /// Highest power accepted by the weak-pumping closed forms.
    pub fn weak_pumping_limit_w(&self) -> Result<f64> {
        power_for_gain_ratio(&self.modes, self.g_nl, WEAK_PUMPING_RATIO)
    }
}

/// Calibrated example source: symmetric critically coupled modes at
/// `Q = 4.843e4` around 1545.265 nm, with `g_nl`, efficiency and leakage
/// fitted once to the g2 and CAR reference points.
pub fn calibrated_source() -> SourceModel {
    let setup = ModeSetup {
        pump_lambda_nm: 1545.265,
        pair_spacing_nm: 1.767,
        pump: ModeQ { q_ext: 96860.0, q_int: 96860.0 },
        signal: ModeQ { q_ext: 96860.0, q_int: 96860.0 },
        idler: ModeQ { q_ext: 96860.0, q_int: 96860.0 },
    };
    SourceModel {
        modes: setup.modes().expect("calibrated modes are valid"),
        g_nl: 1073.711282464194,
        chain: DetectionChain { eta_s: 0.1, eta_i: 0.1, dark_s: 50.0, dark_i: 50.0, leak_s: 353338348.8547921, leak_i: 353338348.8547921 },
        delta: 99.7e-12,
    }
}

/// One row of a power sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub power_w: f64,
    pub intrinsic: IntrinsicRates,
    pub detected: DetectedRates,
    pub model: ModelCorrelations,
}

pub fn power_sweep(model: &SourceModel, powers: &[f64], path: SourcePath, opts: &CorrelationOptions) -> Result<Vec<SweepPoint>> {
    powers
        .iter()
        .map(|&p| {
            let intrinsic = model.intrinsic(p, path)?;
            let detected = detected_rates(&intrinsic, &model.chain, p)?;
            Ok(SweepPoint { power_w: p, intrinsic, detected, model: model_correlations(&detected, model.delta, opts)? })
        })
        .collect()
}

/// `n` log-spaced values from `a` to `b`.
pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    crate::numerics::linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

/// CAR power-law slope on the middle decade of a three-decade sweep ending at `p_max`.
pub fn car_middle_decade_slope(model: &SourceModel, p_max: f64, opts: &CorrelationOptions) -> Result<f64> {
    let powers = logspace(p_max * 1e-2, p_max * 1e-1, 21);
    let sweep = power_sweep(model, &powers, SourcePath::Fdmr, opts)?;
    let car: Vec<f64> = sweep.iter().map(|s| s.model.car).collect();
    log_log_slope(&powers, &car)
}

//! One function per CLI command; each returns its output files in memory.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use fdmr_core::detection::{
    car_middle_decade_slope, fit_peak_and_car, logspace, power_sweep, synthetic_histogram, CorrelationResult,
    DetectedRates, ModelCorrelations, SourcePath,
};
use fdmr_core::floquet::fdmr::loop_rings;
use fdmr_core::floquet::{bulk_bands, chern_number, fdmr_point, fdmr_sweep, ribbon_spectrum, track_branch, FdmrPoint, LoopFamily};
use fdmr_core::linalg::{wrap_phase, TWO_PI};
use fdmr_core::numerics::linear_fit;
use fdmr_core::resonance::{calibrate_phase, fit_resonance, CalibrationMap, ResonanceFit};
use fdmr_core::sfwm::{
    channel_rates_numeric, intrinsic_rates, parametric_gain, power_for_gain_ratio, signal_grid, zeta_amplitudes,
    ModeParams, PumpDrive, WEAK_PUMPING_RATIO,
};
use fdmr_core::transport::{
    disorder_ensemble, loop_resonances, steady_state, transmission_spectrum, EnsembleSummary, Resonance,
    TransmissionSpectrum,
};
use fdmr_core::{Gap, LatticeParams};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{numerical, CliError};
use crate::output::{Artifact, Cell, Csv};

/// Per-run inputs that do not live in the config file.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub seed: u64,
    /// Directory that relative paths in the config resolve against.
    pub config_dir: PathBuf,
    pub input: Option<PathBuf>,
    pub lambda_nm: Option<f64>,
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("missing [{section}] section"))
}

#[derive(Debug, Clone, Serialize)]
pub struct GapOut {
    pub id: usize,
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub center: f64,
    pub band_below: usize,
    pub band_above: usize,
}

impl From<&Gap> for GapOut {
    fn from(g: &Gap) -> Self {
        Self {
            id: g.id,
            name: g.roman().into(),
            lower: g.lower,
            upper: g.upper(),
            width: g.width,
            center: g.center(),
            band_below: g.band_below,
            band_above: g.band_above,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BandsSummary {
    pub grid: usize,
    pub branch_cut: f64,
    pub band_ranges: Vec<(f64, f64)>,
    pub gaps: Vec<GapOut>,
    pub chern_numbers: Vec<i64>,
    pub flat_band: usize,
    pub flat_band_spread: f64,
    /// Largest `|eps L|` of the flat band over the grid.
    pub flat_band_max_abs: f64,
}

pub fn bands(cfg: &RunConfig) -> Result<(Vec<Artifact>, BandsSummary), CliError> {
    let spec = bulk_bands(&cfg.lattice, cfg.bands.grid).map_err(numerical("bulk bands"))?;
    let nb = spec.band_count();
    let chern_numbers = (0..nb).map(|b| chern_number(&spec, b)).collect::<Result<Vec<_>, _>>().map_err(numerical("Chern number"))?;
    let (flat_band, flat_band_spread) = spec.flattest_band();
    let flat_band_max_abs = spec.quasienergies.iter().map(|q| wrap_phase(q[flat_band]).abs()).fold(0.0, f64::max);
    let mut csv = Csv::new(&["kx", "ky", "band", "quasienergy", "label"]);
    for (i, k) in spec.k_grid.iter().enumerate() {
        for b in 0..nb {
            csv.row(vec![k[0].into(), k[1].into(), b.into(), spec.quasienergies[i][b].into(), spec.labels[i][b].as_str().into()]);
        }
    }
    let summary = BandsSummary {
        grid: cfg.bands.grid,
        branch_cut: spec.branch_cut,
        band_ranges: spec.band_ranges(),
        gaps: spec.gaps(cfg.bands.min_gap).iter().map(GapOut::from).collect(),
        chern_numbers,
        flat_band,
        flat_band_spread,
        flat_band_max_abs,
    };
    Ok((vec![csv.into_artifact("bands.csv"), Artifact::json("gaps.json", &summary)?], summary))
}

#[derive(Debug, Clone, Serialize)]
pub struct RibbonSummary {
    pub ny: usize,
    pub nkx: usize,
    pub gaps: Vec<GapOut>,
    pub crossings: Vec<[usize; 2]>,
    pub chirality: Vec<[i32; 2]>,
    pub edge_states: Vec<[usize; 2]>,
    pub max_bulk_boundary_weight: f64,
    pub bulk_state_count: usize,
}

pub fn ribbon(cfg: &RunConfig) -> Result<(Vec<Artifact>, RibbonSummary), CliError> {
    let opts = cfg.ribbon.unwrap_or_default();
    let r = ribbon_spectrum(&cfg.lattice, &opts).map_err(numerical("ribbon spectrum"))?;
    let s = &r.spectrum;
    let mut csv = Csv::new(&["kx", "state", "quasienergy", "label", "boundary_weight"]);
    for (i, k) in s.k_grid.iter().enumerate() {
        for (b, &e) in s.quasienergies[i].iter().enumerate() {
            csv.row(vec![k[0].into(), b.into(), e.into(), s.labels[i][b].as_str().into(), s.boundary_weight[i][b].into()]);
        }
    }
    let summary = RibbonSummary {
        ny: r.ny,
        nkx: opts.nkx,
        gaps: r.gaps.iter().map(GapOut::from).collect(),
        crossings: r.crossings.clone(),
        chirality: r.chirality.clone(),
        edge_states: r.edge_states.clone(),
        max_bulk_boundary_weight: r.max_bulk_boundary_weight,
        bulk_state_count: r.bulk_state_count,
    };
    Ok((vec![csv.into_artifact("ribbon.csv"), Artifact::json("ribbon_summary.json", &summary)?], summary))
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchSummary {
    pub gap_id: usize,
    pub family: LoopFamily,
    pub points: usize,
    pub sweep_points: usize,
    pub max_spread: f64,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdmrSummary {
    pub delta_phi: Vec<f64>,
    pub failed: Vec<(f64, String)>,
    pub flat_tol: f64,
    pub branches: Vec<BranchSummary>,
}

pub fn fdmr_sweep_summary(points: &[fdmr_core::Result<FdmrPoint>], delta_phis: &[f64], flat_tol: f64) -> FdmrSummary {
    let failed = delta_phis
        .iter()
        .zip(points)
        .filter_map(|(d, p)| p.as_ref().err().map(|e| (*d, e.to_string())))
        .collect();
    let mut branches = Vec::new();
    for gap_id in 0..3 {
        for family in [LoopFamily::Upper, LoopFamily::Lower] {
            let br: Vec<(f64, f64, f64)> = track_branch(points, gap_id, family)
                .into_iter()
                .filter_map(|(d, b)| b.map(|b| (d, b.quasienergy, b.spread)))
                .collect();
            if br.is_empty() {
                continue;
            }
            let x: Vec<f64> = br.iter().map(|b| b.0).collect();
            let y: Vec<f64> = br.iter().map(|b| b.1).collect();
            let lf = if br.len() >= 3 { linear_fit(&x, &y).ok() } else { None };
            branches.push(BranchSummary {
                gap_id,
                family,
                points: br.len(),
                sweep_points: delta_phis.len(),
                max_spread: br.iter().map(|b| b.2).fold(0.0, f64::max),
                slope: lf.map(|l| l.slope),
                intercept: lf.map(|l| l.intercept),
                r_squared: lf.map(|l| l.r_squared),
            });
        }
    }
    FdmrSummary { delta_phi: delta_phis.to_vec(), failed, flat_tol, branches }
}

fn fdmr_csv(points: &[fdmr_core::Result<FdmrPoint>]) -> Csv {
    let mut csv = Csv::new(&[
        "delta_phi", "delta_phi_pi", "gap", "family", "quasienergy", "spread", "fraction_from_short_edge", "ipr", "loop_weight",
    ]);
    for p in points.iter().filter_map(|p| p.as_ref().ok()) {
        for b in &p.bands {
            let fam = match b.family {
                LoopFamily::Upper => "upper",
                LoopFamily::Lower => "lower",
            };
            csv.row(vec![
                p.delta_phi.into(),
                (p.delta_phi / PI).into(),
                b.gap_id.into(),
                fam.into(),
                b.quasienergy.into(),
                b.spread.into(),
                b.fraction_from_short_edge.into(),
                b.ipr.into(),
                b.loop_weight.into(),
            ]);
        }
    }
    csv
}

pub fn fdmr(cfg: &RunConfig) -> Result<(Vec<Artifact>, FdmrSummary), CliError> {
    let f = cfg.fdmr.as_ref().ok_or_else(|| missing("fdmr"))?;
    let opts = f.options();
    let dphis = f.delta_phis();
    let points = fdmr_sweep(&cfg.lattice, &dphis, &opts).map_err(numerical("defect sweep"))?;
    let summary = fdmr_sweep_summary(&points, &dphis, opts.flat_tol);
    Ok((vec![fdmr_csv(&points).into_artifact("fdmr_sweep.csv"), Artifact::json("fdmr_summary.json", &summary)?], summary))
}

/// Wavelength span of one bulk gap, short-wavelength (upper-phase) edge first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapWindow {
    pub gap_id: usize,
    pub short_nm: f64,
    pub long_nm: f64,
}

/// Images of the bulk gaps inside `[start_nm, stop_nm]`, using
/// `eps L = beta(lambda) L` modulo `2 pi`.
pub fn gap_windows(params: &LatticeParams, gaps: &[Gap], start_nm: f64, stop_nm: f64) -> Vec<GapWindow> {
    let l = params.ring_length_um;
    let d = &params.dispersion;
    let (phi_lo, phi_hi) = (d.beta(stop_nm) * l, d.beta(start_nm) * l);
    let mut out = Vec::new();
    for g in gaps {
        let m0 = ((phi_lo - g.upper()) / TWO_PI).floor() as i64;
        let m1 = ((phi_hi - g.lower) / TWO_PI).ceil() as i64;
        for m in m0..=m1 {
            let a = g.lower + TWO_PI * m as f64;
            let b = g.upper() + TWO_PI * m as f64;
            if a >= phi_lo && b <= phi_hi {
                let guess = 0.5 * (start_nm + stop_nm);
                out.push(GapWindow {
                    gap_id: g.id,
                    short_nm: d.wavelength_for_phase(b, l, guess),
                    long_nm: d.wavelength_for_phase(a, l, guess),
                });
            }
        }
    }
    out.sort_by(|x, y| x.short_nm.total_cmp(&y.short_nm));
    out
}

/// Transmission statistics over the central part of a gap window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowStats {
    pub window: GapWindow,
    pub central_fraction: f64,
    pub samples: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// `(max - min) / max`.
    pub ripple: f64,
}

pub fn window_stats(w: GapWindow, lambda: &[f64], t: &[f64], central_fraction: f64) -> WindowStats {
    let trim = 0.5 * (1.0 - central_fraction) * (w.long_nm - w.short_nm);
    let (a, b) = (w.short_nm + trim, w.long_nm - trim);
    let v: Vec<f64> = lambda.iter().zip(t).filter(|(l, _)| (a..=b).contains(*l)).map(|(_, t)| *t).collect();
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
    WindowStats { window: w, central_fraction, samples: v.len(), min, max, mean, ripple: (max - min) / max }
}

pub const CENTRAL_GAP_FRACTION: f64 = 0.6;

#[derive(Debug, Clone, Serialize)]
pub struct DefectResonances {
    pub resonances: Vec<Resonance>,
    pub spacings_nm: Vec<f64>,
    pub mean_spacing_nm: Option<f64>,
    /// Mean spacing over a third of the ring FSR.
    pub spacing_over_fsr_third: Option<f64>,
    /// Largest `|T_on - T_off|` inside the central gap windows.
    pub max_in_gap_difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransmissionSummary {
    pub fsr_nm: f64,
    pub points: usize,
    pub gap_windows_off: Vec<WindowStats>,
    pub defect: Option<DefectResonances>,
}

fn spectrum_csv(s: &TransmissionSpectrum) -> Csv {
    let mut csv = Csv::new(&["wavelength_nm", "transmission", "re_t", "im_t"]);
    for (l, t) in s.wavelength_nm.iter().zip(&s.t) {
        csv.row(vec![(*l).into(), t.norm_sqr().into(), t.re.into(), t.im.into()]);
    }
    csv
}

pub fn transmission(cfg: &RunConfig) -> Result<(Vec<Artifact>, TransmissionSummary), CliError> {
    let sw = cfg.sweep.ok_or_else(|| missing("sweep"))?;
    let off_geom = cfg.geometry(false).map_err(numerical("geometry"))?;
    let off = transmission_spectrum(&off_geom, sw.lambda_start_nm, sw.lambda_stop_nm, sw.points).map_err(numerical("transmission"))?;
    let t_off = off.power();
    let gaps = bulk_bands(&cfg.lattice, cfg.bands.grid).map_err(numerical("bulk bands"))?.gaps(cfg.bands.min_gap);
    let windows = gap_windows(&cfg.lattice, &gaps, sw.lambda_start_nm, sw.lambda_stop_nm);
    let gap_windows_off: Vec<WindowStats> =
        windows.iter().map(|w| window_stats(*w, &off.wavelength_nm, &t_off, CENTRAL_GAP_FRACTION)).collect();
    let center = 0.5 * (sw.lambda_start_nm + sw.lambda_stop_nm);
    let fsr_nm = cfg.lattice.dispersion.fsr_nm(center, cfg.lattice.ring_length_um);
    let mut artifacts = vec![spectrum_csv(&off).into_artifact("transmission_defect_off.csv")];
    let defect = match cfg.defect() {
        None => None,
        Some(d) => {
            let geom = cfg.geometry(true).map_err(numerical("geometry"))?;
            let on = transmission_spectrum(&geom, sw.lambda_start_nm, sw.lambda_stop_nm, sw.points).map_err(numerical("transmission"))?;
            let t_on = on.power();
            let core = loop_rings(d.site, LoopFamily::Upper, geom.nx, geom.ny);
            let resonances = loop_resonances(&geom, &core, sw.lambda_start_nm, sw.lambda_stop_nm, sw.points, sw.min_prominence)
                .map_err(numerical("defect resonances"))?;
            let spacings_nm: Vec<f64> = resonances.windows(2).map(|w| w[1].lambda0_nm - w[0].lambda0_nm).collect();
            let mean_spacing_nm = (resonances.len() >= 2)
                .then(|| (resonances[resonances.len() - 1].lambda0_nm - resonances[0].lambda0_nm) / (resonances.len() - 1) as f64);
            let mut max_in_gap_difference = 0.0f64;
            for w in &windows {
                let trim = 0.5 * (1.0 - CENTRAL_GAP_FRACTION) * (w.long_nm - w.short_nm);
                for (i, l) in on.wavelength_nm.iter().enumerate() {
                    if (w.short_nm + trim..=w.long_nm - trim).contains(l) {
                        max_in_gap_difference = max_in_gap_difference.max((t_on[i] - t_off[i]).abs());
                    }
                }
            }
            artifacts.push(spectrum_csv(&on).into_artifact("transmission_defect_on.csv"));
            Some(DefectResonances {
                spacing_over_fsr_third: mean_spacing_nm.map(|s| s / (fsr_nm / 3.0)),
                resonances,
                spacings_nm,
                mean_spacing_nm,
                max_in_gap_difference,
            })
        }
    };
    let summary = TransmissionSummary { fsr_nm, points: sw.points, gap_windows_off, defect };
    artifacts.push(Artifact::json("transmission_summary.json", &summary)?);
    Ok((artifacts, summary))
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldsSummary {
    pub lambda_nm: f64,
    pub defect: bool,
    pub transmission: f64,
    pub through: f64,
    pub exit_power: f64,
    pub total_intensity: f64,
    pub loop_fraction: Option<f64>,
}

pub fn fields(cfg: &RunConfig, ctx: &Context) -> Result<(Vec<Artifact>, FieldsSummary), CliError> {
    let lambda_nm = match ctx.lambda_nm.or(cfg.fields.map(|f| f.lambda_nm)) {
        Some(l) if l > 0.0 && l.is_finite() => l,
        Some(l) => return Err(CliError::Config(format!("wavelength {l} nm must be positive"))),
        None => return Err(missing("fields")),
    };
    let geom = cfg.geometry(true).map_err(numerical("geometry"))?;
    let st = steady_state(&geom, lambda_nm).map_err(numerical("steady state"))?;
    let inten = st.ring_intensity();
    let mut csv = Csv::new(&["ring", "m", "n", "sublattice", "x_um", "y_um", "intensity", "seg1", "seg2", "seg3", "seg4"]);
    let a = cfg.lattice.lattice_constant_um;
    for (r, amps) in st.amplitudes.iter().enumerate() {
        let site = fdmr_core::RingSite::from_index(r, geom.nx);
        let (dx, dy) = match site.sublattice.order() {
            0 => (0.0, 0.0),
            1 => (0.5, 0.0),
            _ => (0.0, 0.5),
        };
        csv.row(vec![
            r.into(),
            site.m.into(),
            site.n.into(),
            site.sublattice.label().into(),
            ((site.m as f64 + dx) * a).into(),
            ((site.n as f64 + dy) * a).into(),
            inten[r].into(),
            amps[0].norm_sqr().into(),
            amps[1].norm_sqr().into(),
            amps[2].norm_sqr().into(),
            amps[3].norm_sqr().into(),
        ]);
    }
    let loop_fraction = cfg.defect().map(|d| {
        let core = loop_rings(d.site, LoopFamily::Upper, geom.nx, geom.ny);
        fdmr_core::transport::loop_fraction(&st, &core)
    });
    let summary = FieldsSummary {
        lambda_nm,
        defect: cfg.defect.is_some(),
        transmission: st.t_out.norm_sqr(),
        through: st.thru.norm_sqr(),
        exit_power: st.exit_power(),
        total_intensity: inten.iter().sum(),
        loop_fraction,
    };
    Ok((vec![csv.into_artifact("fields.csv"), Artifact::json("fields_summary.json", &summary)?], summary))
}

#[derive(Debug, Clone, Serialize)]
pub struct DisorderReport {
    pub seed: u64,
    pub ensembles: Vec<EnsembleSummary>,
}

pub fn disorder(cfg: &RunConfig, ctx: &Context) -> Result<(Vec<Artifact>, DisorderReport), CliError> {
    let dc = cfg.disorder.as_ref().ok_or_else(|| missing("disorder"))?;
    let d = cfg.defect().ok_or_else(|| missing("defect"))?;
    let geom = cfg.geometry(true).map_err(numerical("geometry"))?;
    let tracking = dc.tracking();
    let ensembles = dc
        .specs(ctx.seed)
        .iter()
        .map(|s| disorder_ensemble(&geom, d.site, s, &tracking))
        .collect::<Result<Vec<_>, _>>()
        .map_err(numerical("disorder ensemble"))?;
    let mut csv = Csv::new(&[
        "ensemble", "sigma_coupling", "sigma_phase", "trial", "survived", "lambda0_nm", "fwhm_nm", "q", "shift_nm", "fwhm_change_nm",
    ]);
    let nan = f64::NAN;
    for (e, s) in ensembles.iter().enumerate() {
        for t in &s.trials {
            csv.row(vec![
                e.into(),
                s.sigma_coupling.into(),
                s.sigma_phase.into(),
                t.trial.into(),
                t.survived.into(),
                t.resonance.map_or(nan, |r| r.lambda0_nm).into(),
                t.resonance.map_or(nan, |r| r.fwhm_nm).into(),
                t.resonance.map_or(nan, |r| r.q).into(),
                t.shift_nm.unwrap_or(nan).into(),
                t.fwhm_change_nm.unwrap_or(nan).into(),
            ]);
        }
    }
    let report = DisorderReport { seed: ctx.seed, ensembles };
    Ok((vec![csv.into_artifact("disorder_trials.csv"), Artifact::json("disorder.json", &report)?], report))
}

#[derive(Debug, Clone, Serialize)]
pub struct SfwmSummary {
    pub modes: ModeParams,
    pub g_nl: f64,
    pub weak_pumping_ratio: f64,
    pub weak_pumping_limit_w: f64,
    pub threshold_w: f64,
    pub zeta_power_w: f64,
    pub zeta_gain: f64,
    /// `d ln N_c / d ln P` over the sweep.
    pub pair_rate_slope: Option<f64>,
    pub max_numeric_deviation: Option<f64>,
}

pub fn sfwm(cfg: &RunConfig) -> Result<(Vec<Artifact>, SfwmSummary), CliError> {
    let s = cfg.sfwm.as_ref().ok_or_else(|| missing("sfwm"))?;
    let modes = s.modes.modes().map_err(numerical("modes"))?;
    let quad = s.quadrature.unwrap_or_default();
    let powers = logspace(s.sweep_start_w, s.sweep_stop_w, s.sweep_points);
    let mut csv = Csv::new(&[
        "power_w", "gain", "pairs", "signal", "idler", "pairs_numeric", "signal_numeric", "idler_numeric", "lost_numeric", "quadrature_points",
    ]);
    let mut nc = Vec::with_capacity(powers.len());
    let mut dev: Option<f64> = None;
    for &p in &powers {
        let drive = PumpDrive { power_w: p, omega_laser: modes.pump.omega };
        let g = parametric_gain(&modes, &drive, s.g_nl);
        let (pairs, ns, ni) = intrinsic_rates(&modes, &drive, s.g_nl).map_err(numerical(&format!("closed-form rates at {p:e} W")))?;
        nc.push(pairs);
        let num = if s.numeric {
            let r = channel_rates_numeric(&modes, &drive, s.g_nl, &quad).map_err(numerical(&format!("channel integrals at {p:e} W")))?;
            dev = Some(dev.unwrap_or(0.0).max((r.pairs / pairs - 1.0).abs()));
            Some(r)
        } else {
            None
        };
        let nan = f64::NAN;
        csv.row(vec![
            p.into(),
            g.into(),
            pairs.into(),
            ns.into(),
            ni.into(),
            num.map_or(nan, |r| r.pairs).into(),
            num.map_or(nan, |r| r.signal).into(),
            num.map_or(nan, |r| r.idler).into(),
            num.map_or(nan, |r| r.lost).into(),
            num.map_or(0usize, |r| r.points).into(),
        ]);
    }
    let drive = PumpDrive { power_w: s.power_w, omega_laser: modes.pump.omega };
    let grid = signal_grid(&modes, &quad, s.zeta_points);
    let z = zeta_amplitudes(&modes, &drive, s.g_nl, &grid).map_err(numerical("biphoton amplitudes"))?;
    let mut zcsv = Csv::new(&[
        "omega", "zeta00_re", "zeta00_im", "zeta11_re", "zeta11_im", "zeta10_re", "zeta10_im", "zeta01_re", "zeta01_im", "eta_re", "eta_im",
    ]);
    for i in 0..z.omega.len() {
        let mut row: Vec<Cell> = vec![z.omega[i].into()];
        for v in [z.zeta00[i], z.zeta11[i], z.zeta10[i], z.zeta01[i], z.eta[i]] {
            row.push(v.re.into());
            row.push(v.im.into());
        }
        zcsv.row(row);
    }
    let pair_rate_slope =
        if powers.len() >= 2 { fdmr_core::detection::log_log_slope(&powers, &nc).ok() } else { None };
    let summary = SfwmSummary {
        modes,
        g_nl: s.g_nl,
        weak_pumping_ratio: WEAK_PUMPING_RATIO,
        weak_pumping_limit_w: power_for_gain_ratio(&modes, s.g_nl, WEAK_PUMPING_RATIO).map_err(numerical("weak-pumping limit"))?,
        threshold_w: power_for_gain_ratio(&modes, s.g_nl, 0.25).map_err(numerical("threshold"))?,
        zeta_power_w: s.power_w,
        zeta_gain: z.g,
        pair_rate_slope,
        max_numeric_deviation: dev,
    };
    Ok((
        vec![csv.into_artifact("sfwm_rates.csv"), zcsv.into_artifact("zeta.csv"), Artifact::json("sfwm_summary.json", &summary)?],
        summary,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct CountsReport {
    pub power_w: f64,
    pub path: SourcePath,
    pub seed: u64,
    pub detected: DetectedRates,
    pub model: ModelCorrelations,
    pub car_slope_middle_decade: Option<f64>,
    pub result: CorrelationResult,
}

pub fn counts(cfg: &RunConfig, ctx: &Context) -> Result<(Vec<Artifact>, CountsReport), CliError> {
    let d = cfg.detection.as_ref().ok_or_else(|| missing("detection"))?;
    let model = cfg.source_model()?;
    let detected = model.detected(d.power_w, d.path).map_err(numerical("detected rates"))?;
    let mc = model.correlations(d.power_w, d.path, &d.correlation).map_err(numerical("model correlations"))?;
    let hist = synthetic_histogram(&detected, &d.histogram, ctx.seed).map_err(numerical("histogram"))?;
    let result = fit_peak_and_car(&hist, &d.correlation).map_err(numerical("histogram analysis"))?;
    let mut hcsv = Csv::new(&["t_s", "counts", "g2_si"]);
    for i in 0..hist.t.len() {
        hcsv.row(vec![hist.t[i].into(), hist.counts[i].into(), result.g2_si[i].into()]);
    }
    let mut wcsv = Csv::new(&["width_s", "counts", "net", "car"]);
    for w in &result.car_curve {
        wcsv.row(vec![w.width.into(), w.counts.into(), w.net.into(), w.car.into()]);
    }
    let powers = logspace(d.car_sweep_start_w, d.car_sweep_stop_w, d.car_sweep_points);
    let sweep = power_sweep(&model, &powers, d.path, &d.correlation).map_err(numerical("power sweep"))?;
    let mut pcsv = Csv::new(&[
        "power_w", "pairs", "signal", "idler", "coincidences", "singles_s", "singles_i", "g2_si0", "gamma", "car",
    ]);
    for s in &sweep {
        pcsv.row(vec![
            s.power_w.into(),
            s.intrinsic.pairs.into(),
            s.intrinsic.signal.into(),
            s.intrinsic.idler.into(),
            s.detected.coincidences.into(),
            s.detected.signal.into(),
            s.detected.idler.into(),
            s.model.g2_si0.into(),
            s.model.gamma.into(),
            s.model.car.into(),
        ]);
    }
    let car_slope_middle_decade = match d.path {
        SourcePath::Fdmr => {
            let pmax = 0.999 * model.weak_pumping_limit_w().map_err(numerical("weak-pumping limit"))?;
            Some(car_middle_decade_slope(&model, pmax, &d.correlation).map_err(numerical("CAR slope"))?)
        }
        SourcePath::Edge => None,
    };
    let report = CountsReport { power_w: d.power_w, path: d.path, seed: ctx.seed, detected, model: mc, car_slope_middle_decade, result };
    Ok((
        vec![
            hcsv.into_artifact("histogram.csv"),
            wcsv.into_artifact("car_window.csv"),
            pcsv.into_artifact("car_power.csv"),
            Artifact::json("correlation.json", &report)?,
        ],
        report,
    ))
}

/// Reads a wavelength/transmission CSV. Columns named `wavelength_nm` and
/// `transmission` are used when present, otherwise the first two.
pub fn read_spectrum_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    let mut cols = (0usize, 1usize);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if x.is_empty() && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            let find = |name: &str| fields.iter().position(|f| *f == name);
            if let (Some(a), Some(b)) = (find("wavelength_nm"), find("transmission")) {
                cols = (a, b);
            }
            continue;
        }
        let get = |i: usize| -> Result<f64, CliError> {
            fields
                .get(i)
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| CliError::Config(format!("{}:{}: expected a number in column {}", path.display(), ln + 1, i + 1)))
        };
        x.push(get(cols.0)?);
        y.push(get(cols.1)?);
    }
    Ok((x, y))
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub input: String,
    pub input_sha256: String,
    pub points: usize,
    pub window_nm: (f64, f64),
    pub normalized: bool,
    pub fit: ResonanceFit,
}

pub fn fit(cfg: &RunConfig, ctx: &Context) -> Result<(Vec<Artifact>, FitReport), CliError> {
    let fc = cfg.fit.clone().unwrap_or(crate::config::FitConfig {
        input: None,
        lambda_min_nm: None,
        lambda_max_nm: None,
        normalize_envelope: false,
        options: Default::default(),
    });
    let path = match (&ctx.input, &fc.input) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => ctx.config_dir.join(p),
        (None, None) => return Err(CliError::Config("no input spectrum: pass --input or set [fit] input".into())),
    };
    let bytes = std::fs::read(&path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    let (x, y) = read_spectrum_csv(&path)?;
    let lo = fc.lambda_min_nm.unwrap_or(f64::NEG_INFINITY);
    let hi = fc.lambda_max_nm.unwrap_or(f64::INFINITY);
    let (wl, mut tr): (Vec<f64>, Vec<f64>) = x.iter().zip(&y).filter(|(l, _)| (lo..=hi).contains(*l)).map(|(l, t)| (*l, *t)).unzip();
    if wl.len() < 8 {
        return Err(CliError::Numerical(format!("only {} samples inside the fit window", wl.len())));
    }
    if fc.normalize_envelope {
        tr = normalize_envelope(&wl, &tr);
    }
    let fit = fit_resonance(&wl, &tr, &fc.options).map_err(numerical("resonance fit"))?;
    let window_nm = (wl[0], wl[wl.len() - 1]);
    let report = FitReport {
        input: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        input_sha256: crate::output::sha256_hex(&bytes),
        points: wl.len(),
        window_nm,
        normalized: fc.normalize_envelope,
        fit,
    };
    Ok((vec![Artifact::json("fit.json", &report)?], report))
}

/// Divides by the straight line through the mean of the first and last 5 %
/// of the window.
pub fn normalize_envelope(x: &[f64], y: &[f64]) -> Vec<f64> {
    let k = (x.len() / 20).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (x0, y0) = (mean(&x[..k]), mean(&y[..k]));
    let (x1, y1) = (mean(&x[x.len() - k..]), mean(&y[y.len() - k..]));
    x.iter()
        .zip(y)
        .map(|(xi, yi)| {
            let env = y0 + (y1 - y0) * (xi - x0) / (x1 - x0);
            if env > 0.0 {
                yi / env
            } else {
                *yi
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationSample {
    pub delta_phi: f64,
    pub quasienergy: f64,
    pub wavelength_nm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub gap_id: usize,
    pub family: LoopFamily,
    pub map: CalibrationMap,
    pub samples: Vec<CalibrationSample>,
    pub missing_delta_phi: Vec<f64>,
    /// Defect bands at the report detune, with their in-gap positions.
    pub report: Option<FdmrPoint>,
}

/// Maps tracked quasienergies to wavelengths on the ring comb nearest
/// `reference_nm`, unwrapping across the branch cut.
pub fn quasienergy_wavelengths(params: &LatticeParams, eps: &[f64], reference_nm: f64) -> Vec<f64> {
    let l = params.ring_length_um;
    let d = &params.dispersion;
    let mut out = Vec::with_capacity(eps.len());
    let mut prev: Option<f64> = None;
    for &e in eps {
        let phase = match prev {
            None => e + TWO_PI * ((d.beta(reference_nm) * l - e) / TWO_PI).round(),
            Some(p) => p + wrap_phase(e - p),
        };
        prev = Some(phase);
        out.push(d.wavelength_for_phase(phase, l, reference_nm));
    }
    out
}

pub fn calibrate(cfg: &RunConfig) -> Result<(Vec<Artifact>, CalibrationReport), CliError> {
    let c = cfg.calibrate.as_ref().ok_or_else(|| missing("calibrate"))?;
    let opts = c.options.clone().unwrap_or_default();
    let dphis = c.delta_phis();
    let points = fdmr_sweep(&cfg.lattice, &dphis, &opts).map_err(numerical("defect sweep"))?;
    let branch = track_branch(&points, c.gap_id, c.family);
    let found: Vec<(f64, f64)> = branch.iter().filter_map(|(d, b)| b.as_ref().map(|b| (*d, b.quasienergy))).collect();
    let missing_delta_phi: Vec<f64> = dphis.iter().copied().filter(|d| !found.iter().any(|f| f.0 == *d)).collect();
    let eps: Vec<f64> = found.iter().map(|f| f.1).collect();
    let lambdas = quasienergy_wavelengths(&cfg.lattice, &eps, c.reference_lambda_nm);
    let samples: Vec<CalibrationSample> = found
        .iter()
        .zip(&lambdas)
        .map(|((d, e), l)| CalibrationSample { delta_phi: *d, quasienergy: *e, wavelength_nm: *l })
        .collect();
    let phase_samples: Vec<(f64, f64)> = samples.iter().map(|s| (s.delta_phi, s.wavelength_nm)).collect();
    let heater: Vec<(f64, f64)> = c.heater_samples.iter().map(|h| (h[0], h[1])).collect();
    let map = calibrate_phase(&phase_samples, &heater, c.anchor()).map_err(numerical("calibration fit"))?;
    let report = match c.report_delta_phi_pi {
        None => None,
        Some(r) => {
            let gaps = bulk_bands(&cfg.lattice, opts.bulk_grid).map_err(numerical("bulk bands"))?.gaps(1e-6);
            Some(fdmr_point(&cfg.lattice, r * PI, &opts, &gaps).map_err(numerical("defect bands at report detune"))?)
        }
    };
    let mut csv = Csv::new(&["delta_phi", "delta_phi_pi", "quasienergy", "wavelength_nm", "mapped_wavelength_nm"]);
    for s in &samples {
        csv.row(vec![
            s.delta_phi.into(),
            (s.delta_phi / PI).into(),
            s.quasienergy.into(),
            s.wavelength_nm.into(),
            map.wavelength_at_phase(s.delta_phi).into(),
        ]);
    }
    let out = CalibrationReport { gap_id: c.gap_id, family: c.family, map, samples, missing_delta_phi, report };
    Ok((vec![csv.into_artifact("calibration_samples.csv"), Artifact::json("calibration.json", &out)?], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fdmr_core::lattice::theta_98;

    #[test]
    fn gap_windows_tile_the_comb() {
        let p = LatticeParams { theta_a: theta_98(), ..LatticeParams::default() };
        let gaps = bulk_bands(&p, 21).unwrap().gaps(1e-3);
        let fsr = p.dispersion.fsr_nm(1545.0, p.ring_length_um);
        let w = gap_windows(&p, &gaps, 1545.0 - fsr, 1545.0 + fsr);
        assert!(w.len() >= 3);
        for x in &w {
            assert!(x.long_nm > x.short_nm);
            let g = &gaps[x.gap_id];
            let mid = 0.5 * (x.short_nm + x.long_nm);
            let e = wrap_phase(p.dispersion.beta(mid) * p.ring_length_um);
            assert!(g.contains(e, 0.0) || (g.center() - e).abs() < 0.05 * g.width, "{x:?}");
        }
    }

    #[test]
    fn quasienergy_unwrapping_is_continuous() {
        let p = LatticeParams::default();
        let eps = [3.0, 3.1, -3.1, -3.0];
        let l = quasienergy_wavelengths(&p, &eps, 1545.0);
        for w in l.windows(2) {
            assert!(w[1] < w[0] && w[0] - w[1] < 0.2);
        }
    }

    #[test]
    fn envelope_normalization_flattens_a_slope() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.5 + 0.002 * v).collect();
        for v in normalize_envelope(&x, &y) {
            assert!((v - 1.0).abs() < 0.01);
        }
    }
}

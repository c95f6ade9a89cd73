//! Run configuration schema (TOML).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use fdmr_core::detection::{CorrelationOptions, DetectionChain, HistogramSpec, SourceModel, SourcePath};
use fdmr_core::floquet::{FdmrOptions, LoopFamily, RibbonOptions};
use fdmr_core::lattice::build_finite_geometry;
use fdmr_core::resonance::FitOptions;
use fdmr_core::sfwm::{ModeSetup, QuadratureOptions};
use fdmr_core::transport::{DipSearch, DipTracking, DisorderSpec};
use fdmr_core::{FiniteGeometry, LatticeParams, PhaseDefect, PortConfig, RingSite};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub lattice: LatticeParams,
    pub defect: Option<DefectConfig>,
    pub ports: Option<PortConfig>,
    #[serde(default)]
    pub bands: BandsConfig,
    pub ribbon: Option<RibbonOptions>,
    pub fdmr: Option<FdmrConfig>,
    pub sweep: Option<SweepConfig>,
    pub fields: Option<FieldsConfig>,
    pub disorder: Option<DisorderConfig>,
    pub sfwm: Option<SfwmConfig>,
    pub detection: Option<DetectionConfig>,
    pub fit: Option<FitConfig>,
    pub calibrate: Option<CalibrateConfig>,
}

/// Phase defect with the detune given in units of pi.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectConfig {
    pub site: RingSite,
    #[serde(default = "default_steps")]
    pub steps: Vec<u8>,
    pub delta_phi_pi: f64,
}

fn default_steps() -> Vec<u8> {
    vec![4, 1]
}

impl DefectConfig {
    pub fn to_defect(&self) -> PhaseDefect {
        PhaseDefect { site: self.site, steps: self.steps.clone(), delta_phi: self.delta_phi_pi * PI }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandsConfig {
    /// k points per axis.
    pub grid: usize,
    /// Minimum width of a reported gap (rad).
    pub min_gap: f64,
}

impl Default for BandsConfig {
    fn default() -> Self {
        Self { grid: 101, min_gap: 1e-3 }
    }
}

/// Detune sweep in units of pi.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdmrConfig {
    pub delta_phi_start_pi: f64,
    pub delta_phi_stop_pi: f64,
    pub points: usize,
    #[serde(default)]
    pub options: Option<FdmrOptions>,
}

impl FdmrConfig {
    pub fn delta_phis(&self) -> Vec<f64> {
        phase_grid(self.delta_phi_start_pi, self.delta_phi_stop_pi, self.points)
    }

    pub fn options(&self) -> FdmrOptions {
        self.options.clone().unwrap_or_default()
    }
}

fn phase_grid(start_pi: f64, stop_pi: f64, points: usize) -> Vec<f64> {
    fdmr_core::numerics::linspace(start_pi, stop_pi, points).into_iter().map(|x| x * PI).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub lambda_start_nm: f64,
    pub lambda_stop_nm: f64,
    pub points: usize,
    /// Minimum loop-fraction prominence of a reported defect resonance.
    #[serde(default = "default_prominence")]
    pub min_prominence: f64,
}

fn default_prominence() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsConfig {
    pub lambda_nm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderLevel {
    pub sigma_coupling: f64,
    pub sigma_phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderConfig {
    pub trials: usize,
    pub ensembles: Vec<DisorderLevel>,
    /// Affected rings; defaults to the defect loop and its neighbours.
    #[serde(default)]
    pub region: Option<Vec<RingSite>>,
    pub center_nm: f64,
    pub half_window_nm: f64,
    #[serde(default)]
    pub coarse_points: Option<usize>,
    #[serde(default)]
    pub fine_points: Option<usize>,
    #[serde(default)]
    pub search: Option<DipSearch>,
}

impl DisorderConfig {
    pub fn specs(&self, seed: u64) -> Vec<DisorderSpec> {
        self.ensembles
            .iter()
            .map(|l| DisorderSpec {
                sigma_coupling: l.sigma_coupling,
                sigma_phase: l.sigma_phase,
                region: self.region.clone(),
                trials: self.trials,
                seed,
            })
            .collect()
    }

    pub fn tracking(&self) -> DipTracking {
        let mut t = DipTracking::around(self.center_nm, self.half_window_nm);
        if let Some(n) = self.coarse_points {
            t.coarse_points = n;
        }
        if let Some(n) = self.fine_points {
            t.fine_points = n;
        }
        if let Some(s) = self.search {
            t.search = s;
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SfwmConfig {
    pub modes: ModeSetup,
    /// Nonlinear coupling `g_nl` (1/s).
    pub g_nl: f64,
    /// On-chip pump power for the biphoton amplitudes (W).
    pub power_w: f64,
    pub sweep_start_w: f64,
    pub sweep_stop_w: f64,
    pub sweep_points: usize,
    /// Evaluate the numerical channel integrals alongside the closed forms.
    #[serde(default = "yes")]
    pub numeric: bool,
    #[serde(default)]
    pub quadrature: Option<QuadratureOptions>,
    /// Points of the biphoton amplitude grid.
    #[serde(default = "default_zeta_points")]
    pub zeta_points: usize,
}

fn yes() -> bool {
    true
}

fn default_zeta_points() -> usize {
    801
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    pub chain: DetectionChain,
    /// Correlation width of the coincidence peak (s).
    pub delta_s: f64,
    /// On-chip pump power of the histogram run (W).
    pub power_w: f64,
    #[serde(default = "default_path")]
    pub path: SourcePath,
    #[serde(default)]
    pub histogram: HistogramSpec,
    #[serde(default)]
    pub correlation: CorrelationOptions,
    pub car_sweep_start_w: f64,
    pub car_sweep_stop_w: f64,
    pub car_sweep_points: usize,
}

fn default_path() -> SourcePath {
    SourcePath::Fdmr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Two-column CSV (wavelength nm, transmission); relative to the config file.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub lambda_min_nm: Option<f64>,
    #[serde(default)]
    pub lambda_max_nm: Option<f64>,
    /// Divide by the straight line through the window ends before fitting.
    #[serde(default)]
    pub normalize_envelope: bool,
    #[serde(default)]
    pub options: FitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub delta_phi_start_pi: f64,
    pub delta_phi_stop_pi: f64,
    pub points: usize,
    pub gap_id: usize,
    #[serde(default = "default_family")]
    pub family: LoopFamily,
    /// Wavelength near which quasienergies are mapped to the ring comb.
    pub reference_lambda_nm: f64,
    #[serde(default)]
    pub anchor_delta_phi_pi: Option<f64>,
    #[serde(default)]
    pub anchor_lambda_nm: Option<f64>,
    /// `[heater mW, wavelength nm]` samples.
    #[serde(default)]
    pub heater_samples: Vec<[f64; 2]>,
    /// Detune at which the in-gap position of every defect band is reported.
    #[serde(default)]
    pub report_delta_phi_pi: Option<f64>,
    #[serde(default)]
    pub options: Option<FdmrOptions>,
}

fn default_family() -> LoopFamily {
    LoopFamily::Upper
}

impl CalibrateConfig {
    pub fn delta_phis(&self) -> Vec<f64> {
        phase_grid(self.delta_phi_start_pi, self.delta_phi_stop_pi, self.points)
    }

    pub fn anchor(&self) -> Option<(f64, f64)> {
        Some((self.anchor_delta_phi_pi? * PI, self.anchor_lambda_nm?))
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn check(ok: bool, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(bad(msg))
    }
}

fn core(section: &str) -> impl Fn(fdmr_core::Error) -> CliError + '_ {
    move |e| bad(format!("[{section}] {e}"))
}

fn check_phase_range(section: &str, start_pi: f64, stop_pi: f64, points: usize) -> Result<(), CliError> {
    let ok = (0.0..4.0).contains(&start_pi) && (0.0..4.0).contains(&stop_pi) && stop_pi >= start_pi && points >= 1;
    check(ok, &format!("[{section}] detune range must lie in [0, 4) pi with start <= stop and points >= 1"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(text).map_err(|e| match e {
            CliError::Config(m) => bad(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok((cfg, bytes))
    }

    pub fn defect(&self) -> Option<PhaseDefect> {
        self.defect.as_ref().map(DefectConfig::to_defect)
    }

    pub fn ports(&self) -> PortConfig {
        self.ports.clone().unwrap_or_else(|| PortConfig::standard(self.lattice.nx))
    }

    pub fn geometry(&self, with_defect: bool) -> fdmr_core::Result<FiniteGeometry> {
        let d = if with_defect { self.defect() } else { None };
        build_finite_geometry(&self.lattice, d.as_ref(), &self.ports())
    }

    pub fn source_model(&self) -> Result<SourceModel, CliError> {
        let s = self.sfwm.as_ref().ok_or_else(|| bad("missing [sfwm] section"))?;
        let d = self.detection.as_ref().ok_or_else(|| bad("missing [detection] section"))?;
        Ok(SourceModel { modes: s.modes.modes().map_err(core("sfwm"))?, g_nl: s.g_nl, chain: d.chain, delta: d.delta_s })
    }

    /// Enforces the schema version and every physical invariant.
    pub fn validate(&self) -> Result<(), CliError> {
        check(
            self.schema_version == SCHEMA_VERSION,
            &format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version),
        )?;
        self.lattice.validate().map_err(core("lattice"))?;
        if let Some(d) = &self.defect {
            let pd = d.to_defect();
            pd.validate().map_err(core("defect"))?;
            pd.site.check(self.lattice.nx, self.lattice.ny).map_err(core("defect"))?;
        }
        self.geometry(true).map_err(core("ports"))?;
        check(self.bands.grid >= 4 && self.bands.min_gap > 0.0, "[bands] grid >= 4 and min_gap > 0 required")?;
        if let Some(r) = &self.ribbon {
            check(
                r.nkx >= 2 && r.ny >= 2 && r.bulk_grid >= 4 && r.projection_ky >= 2 && (0.0..=1.0).contains(&r.edge_threshold),
                "[ribbon] nkx, ny >= 2, bulk_grid >= 4 and edge_threshold in [0, 1] required",
            )?;
        }
        if let Some(f) = &self.fdmr {
            check_phase_range("fdmr", f.delta_phi_start_pi, f.delta_phi_stop_pi, f.points)?;
            check_fdmr_options(&f.options(), "fdmr")?;
        }
        if let Some(s) = &self.sweep {
            check(
                s.lambda_start_nm > 0.0 && s.lambda_stop_nm > s.lambda_start_nm && s.points >= 2 && s.min_prominence > 0.0,
                "[sweep] requires 0 < lambda_start_nm < lambda_stop_nm, points >= 2 and min_prominence > 0",
            )?;
        }
        if let Some(f) = &self.fields {
            check(f.lambda_nm > 0.0 && f.lambda_nm.is_finite(), "[fields] lambda_nm must be positive")?;
        }
        if let Some(d) = &self.disorder {
            check(self.defect.is_some(), "[disorder] requires a [defect] section")?;
            check(!d.ensembles.is_empty(), "[disorder] needs at least one ensemble")?;
            for s in d.specs(self.seed) {
                s.validate().map_err(core("disorder"))?;
            }
            let t = d.tracking();
            check(
                t.center_nm > 0.0 && t.half_window_nm > 0.0 && t.coarse_points >= 3 && t.fine_points >= 3,
                "[disorder] tracking window and point counts must be positive",
            )?;
        }
        if let Some(s) = &self.sfwm {
            s.modes.modes().map_err(core("sfwm"))?;
            check(s.g_nl > 0.0 && s.g_nl.is_finite(), "[sfwm] g_nl must be positive")?;
            check(s.power_w > 0.0, "[sfwm] power_w must be positive")?;
            check(
                s.sweep_start_w > 0.0 && s.sweep_stop_w >= s.sweep_start_w && s.sweep_points >= 1,
                "[sfwm] requires 0 < sweep_start_w <= sweep_stop_w and sweep_points >= 1",
            )?;
            check(s.zeta_points >= 3, "[sfwm] zeta_points must be at least 3")?;
            if let Some(q) = &s.quadrature {
                check(
                    q.half_width_kappas > 0.0 && q.points >= 3 && q.points_per_kappa > 0.0 && q.rel_tol > 0.0,
                    "[sfwm.quadrature] values must be positive",
                )?;
            }
        }
        if let Some(d) = &self.detection {
            d.chain.validate().map_err(core("detection"))?;
            d.correlation.validate().map_err(core("detection.correlation"))?;
            check(d.delta_s > 0.0 && d.power_w > 0.0, "[detection] delta_s and power_w must be positive")?;
            let h = &d.histogram;
            check(
                h.bins >= 3 && h.bins % 2 == 1 && h.bin_width_s > 0.0 && h.acquisition_s > 0.0 && h.delta_true_s > 0.0,
                "[detection.histogram] needs an odd bin count >= 3 and positive widths and duration",
            )?;
            check(
                d.car_sweep_start_w > 0.0 && d.car_sweep_stop_w >= d.car_sweep_start_w && d.car_sweep_points >= 1,
                "[detection] requires 0 < car_sweep_start_w <= car_sweep_stop_w",
            )?;
            check(self.sfwm.is_some(), "[detection] requires an [sfwm] section")?;
        }
        if let Some(f) = &self.fit {
            check(f.options.starts >= 1 && f.options.min_samples_per_linewidth > 0.0, "[fit.options] starts >= 1 required")?;
            if let (Some(a), Some(b)) = (f.lambda_min_nm, f.lambda_max_nm) {
                check(b > a, "[fit] lambda_max_nm must exceed lambda_min_nm")?;
            }
        }
        if let Some(c) = &self.calibrate {
            check_phase_range("calibrate", c.delta_phi_start_pi, c.delta_phi_stop_pi, c.points)?;
            check(c.points >= 2 && c.gap_id < 3, "[calibrate] needs points >= 2 and gap_id in 0..3")?;
            check(c.reference_lambda_nm > 0.0, "[calibrate] reference_lambda_nm must be positive")?;
            check(
                c.anchor_delta_phi_pi.is_some() == c.anchor_lambda_nm.is_some(),
                "[calibrate] anchor_delta_phi_pi and anchor_lambda_nm go together",
            )?;
            if let Some(r) = c.report_delta_phi_pi {
                check((0.0..4.0).contains(&r), "[calibrate] report_delta_phi_pi must lie in [0, 4)")?;
            }
            check_fdmr_options(&c.options.clone().unwrap_or_default(), "calibrate")?;
        }
        Ok(())
    }
}

fn check_fdmr_options(o: &FdmrOptions, section: &str) -> Result<(), CliError> {
    o.defect.validate().map_err(core(section))?;
    o.defect.site.check(o.supercell_nx, o.supercell_ny).map_err(core(section))?;
    check(
        (1..=4).contains(&o.k_points) && o.flat_tol > 0.0 && o.gap_margin >= 0.0 && o.bulk_grid >= 4,
        &format!("[{section}.options] k_points in 1..=4, positive flat_tol and bulk_grid >= 4 required"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
[lattice]
theta_a = 1.4288992721907328
ring_length_um = 110.97
lattice_constant_um = 59.532
loss_db_per_cm = 2.6
nx = 4
ny = 4
[lattice.dispersion]
n0 = 2.4
lambda0_nm = 1545.0
dn_dlambda_per_nm = -1.0976e-3
"#;

    #[test]
    fn minimal_config_loads_with_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.bands, BandsConfig::default());
        assert_eq!(c.ports(), PortConfig::standard(4));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("nx = 4", "nx = 4\ncolour = 3");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
        let text = format!("{MINIMAL}\n[extra]\na = 1\n");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn physical_invariants_are_enforced_on_load() {
        let text = MINIMAL.replace("theta_a = 1.4288992721907328", "theta_a = 2.0");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
        let text = format!("{MINIMAL}\n[defect]\nsite = {{ m = 9, n = 0, sublattice = \"B\" }}\ndelta_phi_pi = 1.0\n");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
        let text = MINIMAL.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(RunConfig::parse(&text), Err(CliError::Config(_))));
    }

    #[test]
    fn shipped_default_config_is_valid() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
        let (c, _) = RunConfig::load(&path).unwrap();
        assert!(c.defect.is_some() && c.sfwm.is_some() && c.detection.is_some() && c.calibrate.is_some());
    }
}

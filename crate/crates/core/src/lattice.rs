//! Three-ring-per-cell microring lattice with a four-step coupling sequence.
//!
//! Step 1 couples A-B inside a cell, step 2 couples A-C inside a cell, step 3
//! couples A(m, n) to B(m - 1, n) and step 4 couples A(m, n) to C(m, n - 1).
//! Sites are flattened as `3 (n Nx + m) + s` with `s` = 0, 1, 2 for A, B, C.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{CMatrix, C64, TWO_PI};

/// Linear effective-index model `n_eff(lambda) = n0 + dn/dlambda (lambda - lambda0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dispersion {
    pub n0: f64,
    pub lambda0_nm: f64,
    pub dn_dlambda_per_nm: f64,
}

impl Default for Dispersion {
    fn default() -> Self {
        Self { n0: 2.40, lambda0_nm: 1545.0, dn_dlambda_per_nm: -1.0976e-3 }
    }
}

impl Dispersion {
    pub fn n_eff(&self, lambda_nm: f64) -> f64 {
        self.n0 + self.dn_dlambda_per_nm * (lambda_nm - self.lambda0_nm)
    }

    /// Group index `n - lambda dn/dlambda`.
    pub fn group_index(&self, lambda_nm: f64) -> f64 {
        self.n_eff(lambda_nm) - lambda_nm * self.dn_dlambda_per_nm
    }

    /// Propagation constant in rad/um.
    pub fn beta(&self, lambda_nm: f64) -> f64 {
        TWO_PI * self.n_eff(lambda_nm) / (lambda_nm * 1e-3)
    }

    /// Free spectral range (nm) of a ring of the given length.
    pub fn fsr_nm(&self, lambda_nm: f64, length_um: f64) -> f64 {
        lambda_nm * lambda_nm / (self.group_index(lambda_nm) * length_um * 1e3)
    }

    /// Wavelength (nm) at which `beta * length` equals `phase`, by Newton
    /// iteration from `guess_nm`.
    pub fn wavelength_for_phase(&self, phase: f64, length_um: f64, guess_nm: f64) -> f64 {
        let mut lam = guess_nm;
        for _ in 0..50 {
            let f = self.beta(lam) * length_um - phase;
            let h = 1e-4;
            let df = (self.beta(lam + h) - self.beta(lam - h)) * length_um / (2.0 * h);
            let step = f / df;
            lam -= step;
            if step.abs() < 1e-13 * lam {
                break;
            }
        }
        lam
    }

    fn validate(&self) -> Result<()> {
        if !(self.n0 > 0.0 && self.lambda0_nm > 0.0 && self.dn_dlambda_per_nm.is_finite()) {
            return invalid("dispersion requires n0 > 0, lambda0 > 0 and finite slope");
        }
        Ok(())
    }
}

/// Geometry, coupling, dispersion and loss of the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeParams {
    /// Coupling angle per step (rad); power coupling is `sin^2`.
    pub theta_a: f64,
    /// Ring circumference (um).
    pub ring_length_um: f64,
    /// Lattice constant (um).
    pub lattice_constant_um: f64,
    pub dispersion: Dispersion,
    /// Propagation loss (dB/cm); used only by the transport solver.
    pub loss_db_per_cm: f64,
    pub nx: usize,
    pub ny: usize,
}

/// Coupling angle giving 98 % power transfer per coupler.
pub fn theta_98() -> f64 {
    0.98_f64.sqrt().asin()
}

impl Default for LatticeParams {
    fn default() -> Self {
        Self {
            theta_a: theta_98(),
            ring_length_um: 4.0 * 29.64 - 8.0 * 5.0 + TWO_PI * 5.0,
            lattice_constant_um: 59.532,
            dispersion: Dispersion::default(),
            loss_db_per_cm: 2.6,
            nx: 10,
            ny: 10,
        }
    }
}

impl LatticeParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.theta_a) {
            return invalid(format!("theta_a = {} outside [0, pi/2]", self.theta_a));
        }
        if !(self.ring_length_um > 0.0 && self.ring_length_um.is_finite()) {
            return invalid("ring length must be positive");
        }
        if !(self.lattice_constant_um > 0.0 && self.lattice_constant_um.is_finite()) {
            return invalid("lattice constant must be positive");
        }
        if !(self.loss_db_per_cm >= 0.0 && self.loss_db_per_cm.is_finite()) {
            return invalid("loss must be non-negative");
        }
        if self.nx < 1 || self.ny < 1 {
            return invalid("nx and ny must be at least 1");
        }
        self.dispersion.validate()
    }

    /// Coupling rate `k_a = 4 theta_a / L` (rad/um).
    pub fn coupling_rate(&self) -> f64 {
        4.0 * self.theta_a / self.ring_length_um
    }

    /// Power coupling `sin^2(theta_a)`.
    pub fn power_coupling(&self) -> f64 {
        self.theta_a.sin().powi(2)
    }

    /// Anomalous regime flag, `theta_a >= pi / sqrt(8)`.
    pub fn is_anomalous(&self) -> bool {
        self.theta_a >= std::f64::consts::PI / 8.0_f64.sqrt()
    }

    /// Field amplitude transmission of one quarter-ring segment.
    pub fn segment_amplitude(&self) -> f64 {
        let length_cm = self.ring_length_um * 1e-4 / 4.0;
        10f64.powf(-self.loss_db_per_cm * length_cm / 20.0)
    }

    pub fn site_count(&self) -> usize {
        3 * self.nx * self.ny
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sublattice {
    A,
    B,
    C,
}

impl Sublattice {
    pub fn order(self) -> usize {
        match self {
            Sublattice::A => 0,
            Sublattice::B => 1,
            Sublattice::C => 2,
        }
    }

    pub fn from_order(s: usize) -> Option<Self> {
        match s {
            0 => Some(Sublattice::A),
            1 => Some(Sublattice::B),
            2 => Some(Sublattice::C),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Sublattice::A => "A",
            Sublattice::B => "B",
            Sublattice::C => "C",
        }
    }
}

/// A ring identified by unit cell and sublattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSite {
    pub m: usize,
    pub n: usize,
    pub sublattice: Sublattice,
}

impl RingSite {
    pub fn new(m: usize, n: usize, sublattice: Sublattice) -> Self {
        Self { m, n, sublattice }
    }

    pub fn index(&self, nx: usize) -> usize {
        3 * (self.n * nx + self.m) + self.sublattice.order()
    }

    pub fn from_index(index: usize, nx: usize) -> Self {
        let cell = index / 3;
        Self {
            m: cell % nx,
            n: cell / nx,
            sublattice: Sublattice::from_order(index % 3).unwrap(),
        }
    }

    pub fn check(&self, nx: usize, ny: usize) -> Result<()> {
        if self.m >= nx || self.n >= ny {
            return Err(Error::SiteOutOfRange(format!(
                "({}, {}) outside {}x{} lattice",
                self.m, self.n, nx, ny
            )));
        }
        Ok(())
    }
}

/// Phase detune applied to selected coupling steps of one ring. The total
/// round-trip detune `delta_phi` is split equally over the listed steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDefect {
    pub site: RingSite,
    pub steps: Vec<u8>,
    pub delta_phi: f64,
}

impl PhaseDefect {
    /// Canonical defect: B ring, steps {4, 1}.
    pub fn canonical(m: usize, n: usize, delta_phi: f64) -> Self {
        Self { site: RingSite::new(m, n, Sublattice::B), steps: vec![4, 1], delta_phi }
    }

    pub fn validate(&self) -> Result<()> {
        for &j in &self.steps {
            check_step(j)?;
        }
        let mut s = self.steps.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.steps.len() {
            return invalid("defect steps must be distinct");
        }
        if !self.delta_phi.is_finite() {
            return invalid("delta_phi must be finite");
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        !self.steps.is_empty()
    }

    /// Phase added on one listed segment (rad).
    pub fn segment_phase(&self, j: u8) -> f64 {
        if self.steps.contains(&j) {
            self.delta_phi / self.steps.len() as f64
        } else {
            0.0
        }
    }

    /// Diagonal propagation-constant shift during step `j` (rad/um).
    pub fn delta_beta(&self, j: u8, ring_length_um: f64) -> f64 {
        4.0 * self.segment_phase(j) / ring_length_um
    }
}

/// Hermitian coupling matrix of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepHamiltonian {
    pub j: u8,
    pub matrix: CMatrix,
}

impl StepHamiltonian {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn hermitian_residual(&self) -> f64 {
        crate::linalg::hermitian_residual(&self.matrix)
    }
}

pub(crate) fn check_step(j: u8) -> Result<()> {
    if (1..=4).contains(&j) {
        Ok(())
    } else {
        Err(Error::InvalidStep(j))
    }
}

fn check_k(k: &[f64]) -> Result<()> {
    if k.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        invalid("non-finite Bloch momentum")
    }
}

fn couple(h: &mut CMatrix, a: usize, b: usize, v: C64) {
    h[(a, b)] += v;
    h[(b, a)] += v.conj();
}

/// Bulk 3x3 step Hamiltonian at Bloch momentum `k` (rad/um).
pub fn build_bulk_step(params: &LatticeParams, j: u8, k: [f64; 2]) -> Result<StepHamiltonian> {
    check_step(j)?;
    check_k(&k)?;
    let ka = params.coupling_rate();
    let lam = params.lattice_constant_um;
    let mut h = CMatrix::zeros(3, 3);
    match j {
        1 => couple(&mut h, 0, 1, C64::new(ka, 0.0)),
        2 => couple(&mut h, 0, 2, C64::new(ka, 0.0)),
        3 => couple(&mut h, 0, 1, C64::from_polar(ka, -k[0] * lam)),
        _ => couple(&mut h, 0, 2, C64::from_polar(ka, -k[1] * lam)),
    }
    Ok(StepHamiltonian { j, matrix: h })
}

/// Ribbon step Hamiltonian: periodic along x with momentum `kx`, `ny` cells
/// along y with hard walls.
pub fn build_ribbon_step(params: &LatticeParams, j: u8, kx: f64, ny: usize) -> Result<StepHamiltonian> {
    check_step(j)?;
    check_k(&[kx])?;
    if ny < 2 {
        return invalid(format!("ribbon needs ny >= 2, got {ny}"));
    }
    let ka = params.coupling_rate();
    let mut h = CMatrix::zeros(3 * ny, 3 * ny);
    for n in 0..ny {
        let a = 3 * n;
        match j {
            1 => couple(&mut h, a, a + 1, C64::new(ka, 0.0)),
            2 => couple(&mut h, a, a + 2, C64::new(ka, 0.0)),
            3 => couple(&mut h, a, a + 1, C64::from_polar(ka, -kx * params.lattice_constant_um)),
            _ => {
                if n > 0 {
                    couple(&mut h, a, 3 * (n - 1) + 2, C64::new(ka, 0.0));
                }
            }
        }
    }
    Ok(StepHamiltonian { j, matrix: h })
}

/// Supercell step Hamiltonian with Floquet-periodic wrap-around hops and an
/// optional phase defect.
pub fn build_supercell_step(
    params: &LatticeParams,
    j: u8,
    k: [f64; 2],
    defect: Option<&PhaseDefect>,
) -> Result<StepHamiltonian> {
    check_step(j)?;
    check_k(&k)?;
    let (nx, ny) = (params.nx, params.ny);
    if let Some(d) = defect {
        d.validate()?;
        d.site.check(nx, ny)?;
    }
    let ka = params.coupling_rate();
    let lam = params.lattice_constant_um;
    let mut h = CMatrix::zeros(3 * nx * ny, 3 * nx * ny);
    let idx = |m: usize, n: usize, s: usize| 3 * (n * nx + m) + s;
    for n in 0..ny {
        for m in 0..nx {
            let a = idx(m, n, 0);
            match j {
                1 => couple(&mut h, a, idx(m, n, 1), C64::new(ka, 0.0)),
                2 => couple(&mut h, a, idx(m, n, 2), C64::new(ka, 0.0)),
                3 => {
                    let (mm, phase) = if m == 0 {
                        (nx - 1, -k[0] * nx as f64 * lam)
                    } else {
                        (m - 1, 0.0)
                    };
                    couple(&mut h, a, idx(mm, n, 1), C64::from_polar(ka, phase));
                }
                _ => {
                    let (nn, phase) = if n == 0 {
                        (ny - 1, -k[1] * ny as f64 * lam)
                    } else {
                        (n - 1, 0.0)
                    };
                    couple(&mut h, a, idx(m, nn, 2), C64::from_polar(ka, phase));
                }
            }
        }
    }
    if let Some(d) = defect {
        let db = d.delta_beta(j, params.ring_length_um);
        let s = d.site.index(nx);
        h[(s, s)] += C64::new(db, 0.0);
    }
    Ok(StepHamiltonian { j, matrix: h })
}

/// Directional coupler between two rings, active during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupler {
    pub a: usize,
    pub b: usize,
    pub step: u8,
    pub theta: f64,
}

/// Port waveguide configuration for one boundary ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortSpec {
    pub site: RingSite,
    /// Coupling angle; defaults to `theta_a`.
    #[serde(default)]
    pub theta_io: Option<f64>,
    /// Step slot where the waveguide couples; defaults to the boundary slot.
    #[serde(default)]
    pub step: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortConfig {
    pub input: PortSpec,
    pub output: PortSpec,
}

impl PortConfig {
    /// Input on the bottom-left A ring, output on the bottom-right B ring.
    pub fn standard(nx: usize) -> Self {
        Self {
            input: PortSpec { site: RingSite::new(0, 0, Sublattice::A), theta_io: None, step: None },
            output: PortSpec {
                site: RingSite::new(nx.saturating_sub(1), 0, Sublattice::B),
                theta_io: None,
                step: None,
            },
        }
    }
}

/// Resolved port coupler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortCoupler {
    pub ring: usize,
    pub step: u8,
    pub theta: f64,
}

/// Finite lattice with hard walls and two port waveguides.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGeometry {
    pub nx: usize,
    pub ny: usize,
    pub couplers: Vec<Coupler>,
    pub input: PortCoupler,
    pub output: PortCoupler,
    /// Extra phase per ring and step segment (rad).
    pub segment_phase: Vec<[f64; 4]>,
    pub ring_length_um: f64,
    pub dispersion: Dispersion,
    /// Field amplitude transmission per segment.
    pub segment_amplitude: f64,
}

impl FiniteGeometry {
    pub fn ring_count(&self) -> usize {
        3 * self.nx * self.ny
    }

    /// Total coupler count including the two port couplers.
    pub fn coupler_count(&self) -> usize {
        self.couplers.len() + 2
    }

    /// Partner table: `partners[step - 1][ring] = Some(coupler index)`.
    pub fn partner_table(&self) -> [Vec<Option<usize>>; 4] {
        let n = self.ring_count();
        let mut t: [Vec<Option<usize>>; 4] = std::array::from_fn(|_| vec![None; n]);
        for (ci, c) in self.couplers.iter().enumerate() {
            let s = (c.step - 1) as usize;
            t[s][c.a] = Some(ci);
            t[s][c.b] = Some(ci);
        }
        t
    }

    /// Rings joined to `ring` by a lattice coupler.
    pub fn neighbors(&self, ring: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .couplers
            .iter()
            .filter_map(|c| {
                if c.a == ring {
                    Some(c.b)
                } else if c.b == ring {
                    Some(c.a)
                } else {
                    None
                }
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Steps at which a ring of this sublattice couples inside an infinite lattice.
pub fn active_steps(s: Sublattice) -> &'static [u8] {
    match s {
        Sublattice::A => &[1, 2, 3, 4],
        Sublattice::B => &[1, 3],
        Sublattice::C => &[2, 4],
    }
}

/// Enumerates rings, couplers, ports and defect phases of a finite lattice.
pub fn build_finite_geometry(
    params: &LatticeParams,
    defect: Option<&PhaseDefect>,
    ports: &PortConfig,
) -> Result<FiniteGeometry> {
    params.validate()?;
    let (nx, ny) = (params.nx, params.ny);
    let idx = |m: usize, n: usize, s: usize| 3 * (n * nx + m) + s;
    let theta = params.theta_a;
    let mut couplers = Vec::new();
    for n in 0..ny {
        for m in 0..nx {
            let a = idx(m, n, 0);
            couplers.push(Coupler { a, b: idx(m, n, 1), step: 1, theta });
            couplers.push(Coupler { a, b: idx(m, n, 2), step: 2, theta });
            if m > 0 {
                couplers.push(Coupler { a, b: idx(m - 1, n, 1), step: 3, theta });
            }
            if n > 0 {
                couplers.push(Coupler { a, b: idx(m, n - 1, 2), step: 4, theta });
            }
        }
    }
    let mut geom = FiniteGeometry {
        nx,
        ny,
        couplers,
        input: PortCoupler { ring: 0, step: 1, theta },
        output: PortCoupler { ring: 0, step: 1, theta },
        segment_phase: vec![[0.0; 4]; 3 * nx * ny],
        ring_length_um: params.ring_length_um,
        dispersion: params.dispersion,
        segment_amplitude: params.segment_amplitude(),
    };
    geom.input = resolve_port(&geom, &ports.input, theta)?;
    geom.output = resolve_port(&geom, &ports.output, theta)?;
    if geom.input.ring == geom.output.ring && geom.input.step == geom.output.step {
        return Err(Error::Port("input and output share one slot".into()));
    }
    if let Some(d) = defect {
        d.validate()?;
        d.site.check(nx, ny)?;
        let r = d.site.index(nx);
        for j in 1..=4u8 {
            geom.segment_phase[r][(j - 1) as usize] += d.segment_phase(j);
        }
    }
    Ok(geom)
}

fn resolve_port(geom: &FiniteGeometry, spec: &PortSpec, theta_a: f64) -> Result<PortCoupler> {
    spec.site.check(geom.nx, geom.ny).map_err(|e| Error::Port(e.to_string()))?;
    let theta = spec.theta_io.unwrap_or(theta_a);
    if !(theta > 0.0 && theta <= std::f64::consts::FRAC_PI_2) {
        return Err(Error::Port(format!("theta_io = {theta} outside (0, pi/2]")));
    }
    let ring = spec.site.index(geom.nx);
    let table = geom.partner_table();
    // Boundary slots: steps at which this sublattice normally couples but the
    // partner lies outside the lattice.
    let free: Vec<u8> = active_steps(spec.site.sublattice)
        .iter()
        .copied()
        .filter(|&j| table[(j - 1) as usize][ring].is_none())
        .collect();
    let step = match spec.step {
        Some(j) => {
            check_step(j)?;
            if !free.contains(&j) {
                return Err(Error::Port(format!(
                    "step {j} of ring {:?} is not a free boundary slot",
                    spec.site
                )));
            }
            j
        }
        None => *free
            .iter()
            .max()
            .ok_or_else(|| Error::Port(format!("ring {:?} is interior", spec.site)))?,
    };
    Ok(PortCoupler { ring, step, theta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LatticeParams {
        LatticeParams::default()
    }

    #[test]
    fn default_fsr_near_5_3_nm() {
        let p = params();
        let fsr = p.dispersion.fsr_nm(1545.0, p.ring_length_um);
        assert!((fsr - 5.3).abs() < 0.05, "fsr {fsr}");
    }

    #[test]
    fn anomalous_flag_threshold() {
        let mut p = params();
        p.theta_a = std::f64::consts::PI / 8f64.sqrt();
        assert!(p.is_anomalous());
        p.theta_a -= 1e-9;
        assert!(!p.is_anomalous());
        assert!(params().is_anomalous());
    }

    #[test]
    fn site_index_bijection() {
        let (nx, ny) = (4, 3);
        for i in 0..3 * nx * ny {
            let s = RingSite::from_index(i, nx);
            assert!(s.m < nx && s.n < ny);
            assert_eq!(s.index(nx), i);
        }
    }

    #[test]
    fn bulk_zero_coupling_is_zero() {
        let mut p = params();
        p.theta_a = 0.0;
        for j in 1..=4 {
            let h = build_bulk_step(&p, j, [0.3, -0.2]).unwrap();
            assert!(h.matrix.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn bulk_step1_entries() {
        let p = params();
        let h = build_bulk_step(&p, 1, [0.7, 0.1]).unwrap();
        let ka = p.coupling_rate();
        for r in 0..3 {
            for c in 0..3 {
                let want = if (r, c) == (0, 1) || (r, c) == (1, 0) { ka } else { 0.0 };
                assert!((h.matrix[(r, c)] - C64::new(want, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn bulk_step4_at_ky_pi() {
        let p = params();
        let ky = std::f64::consts::PI / p.lattice_constant_um;
        let h = build_bulk_step(&p, 4, [0.0, ky]).unwrap();
        assert!((h.matrix[(0, 2)] - C64::new(-p.coupling_rate(), 0.0)).norm() < 1e-12);
    }

    #[test]
    fn invalid_step_and_momentum() {
        let p = params();
        assert_eq!(build_bulk_step(&p, 0, [0.0, 0.0]).unwrap_err(), Error::InvalidStep(0));
        assert_eq!(build_bulk_step(&p, 5, [0.0, 0.0]).unwrap_err(), Error::InvalidStep(5));
        assert!(build_bulk_step(&p, 1, [f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn ribbon_requires_two_rows() {
        assert!(build_ribbon_step(&params(), 4, 0.0, 1).is_err());
    }

    #[test]
    fn ribbon_ny2_step4_hops() {
        let p = params();
        let h = build_ribbon_step(&p, 4, 0.3, 2).unwrap();
        // Only A(row 1) <-> C(row 0) survives: sites 3 and 2.
        let mut hops = vec![];
        for r in 0..6 {
            for c in r + 1..6 {
                if h.matrix[(r, c)].norm() > 0.0 {
                    hops.push((r, c));
                }
            }
        }
        assert_eq!(hops, vec![(2, 3)]);
        assert_eq!(build_ribbon_step(&p, 1, 0.0, 10).unwrap().dim(), 30);
    }

    #[test]
    fn supercell_single_cell_equals_bulk() {
        let mut p = params();
        p.nx = 1;
        p.ny = 1;
        let k = [0.013, -0.021];
        for j in 1..=4 {
            let s = build_supercell_step(&p, j, k, None).unwrap();
            let b = build_bulk_step(&p, j, k).unwrap();
            assert!((s.matrix - b.matrix).norm() < 1e-14);
        }
    }

    #[test]
    fn supercell_dimension_and_defect_entries() {
        let p = params();
        let d = PhaseDefect::canonical(5, 0, std::f64::consts::PI);
        let s = d.site.index(p.nx);
        let mut carrying = 0;
        for j in 1..=4 {
            let h = build_supercell_step(&p, j, [0.0, 0.0], Some(&d)).unwrap();
            assert_eq!(h.dim(), 300);
            assert!(h.hermitian_residual() < 1e-12);
            let diag = h.matrix[(s, s)].re;
            if diag != 0.0 {
                carrying += 1;
                assert!((diag - 2.0 * std::f64::consts::PI / p.ring_length_um).abs() < 1e-12);
            }
        }
        assert_eq!(carrying, 2);
    }

    #[test]
    fn defect_out_of_range() {
        let p = params();
        let d = PhaseDefect::canonical(10, 0, 1.0);
        assert!(matches!(
            build_supercell_step(&p, 1, [0.0, 0.0], Some(&d)),
            Err(Error::SiteOutOfRange(_))
        ));
    }

    #[test]
    fn zero_detune_defect_is_identity() {
        let p = params();
        let d = PhaseDefect::canonical(3, 0, 0.0);
        for j in 1..=4 {
            let a = build_supercell_step(&p, j, [0.01, 0.02], Some(&d)).unwrap();
            let b = build_supercell_step(&p, j, [0.01, 0.02], None).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn finite_geometry_counts() {
        let mut p = params();
        let g = build_finite_geometry(&p, None, &PortConfig::standard(p.nx)).unwrap();
        assert_eq!(g.ring_count(), 300);
        assert_eq!(g.input, PortCoupler { ring: 0, step: 4, theta: p.theta_a });
        assert_eq!(g.output.ring, RingSite::new(9, 0, Sublattice::B).index(10));
        assert_eq!(g.output.step, 3);

        p.nx = 1;
        p.ny = 1;
        let g = build_finite_geometry(&p, None, &PortConfig::standard(1)).unwrap();
        assert_eq!(g.ring_count(), 3);
        assert_eq!(g.coupler_count(), 4);

        // 2x1: two intra-cell pairs per cell plus one step-3 link.
        p.nx = 2;
        let g = build_finite_geometry(&p, None, &PortConfig::standard(2)).unwrap();
        assert_eq!(g.couplers.len(), 5);
        assert_eq!(g.couplers.iter().filter(|c| c.step == 3).count(), 1);
    }

    #[test]
    fn port_on_interior_ring_rejected() {
        let p = params();
        let mut ports = PortConfig::standard(p.nx);
        ports.input.site = RingSite::new(4, 4, Sublattice::A);
        assert!(matches!(build_finite_geometry(&p, None, &ports), Err(Error::Port(_))));
    }

    #[test]
    fn each_ring_pair_couples_once_per_period() {
        let p = params();
        let g = build_finite_geometry(&p, None, &PortConfig::standard(p.nx)).unwrap();
        let mut seen = std::collections::HashSet::new();
        for c in &g.couplers {
            let key = (c.a.min(c.b), c.a.max(c.b));
            assert!(seen.insert(key), "pair {key:?} coupled twice");
            assert_eq!(c.theta, p.theta_a);
        }
        for step in 1..=4u8 {
            let mut count = vec![0; g.ring_count()];
            for c in g.couplers.iter().filter(|c| c.step == step) {
                count[c.a] += 1;
                count[c.b] += 1;
            }
            assert!(count.iter().all(|&k| k <= 1));
        }
    }
}

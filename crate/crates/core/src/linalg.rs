//! Complex dense and banded linear algebra helpers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };
pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Wraps an angle into (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut y = x.rem_euclid(TWO_PI);
    if y > pi {
        y -= TWO_PI;
    }
    if y <= -pi {
        y += TWO_PI;
    }
    y
}

/// Angle measured counter-clockwise from `origin`, in [0, 2pi).
pub fn phase_from(x: f64, origin: f64) -> f64 {
    let y = (x - origin).rem_euclid(TWO_PI);
    if y >= TWO_PI {
        0.0
    } else {
        y
    }
}

/// `||H - H^dagger||_F / ||H||_F`, or the absolute norm when `H` vanishes.
pub fn hermitian_residual(h: &CMatrix) -> f64 {
    let diff = h - h.adjoint();
    let norm = h.norm();
    if norm == 0.0 {
        diff.norm()
    } else {
        diff.norm() / norm
    }
}

/// Largest entry of `|U^dagger U - I|`.
pub fn unitarity_residual(u: &CMatrix) -> f64 {
    let n = u.nrows();
    let g = u.adjoint() * u - CMatrix::identity(n, n);
    g.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// Eigen-decomposition of a unitary matrix.
#[derive(Debug, Clone)]
pub struct UnitaryEigen {
    /// Eigenphases `arg(lambda)` in (-pi, pi].
    pub phases: Vec<f64>,
    /// Orthonormal eigenvectors as columns.
    pub vectors: CMatrix,
}

/// Eigenphases and eigenvectors of a unitary matrix.
///
/// The Cayley transform `H = i (I - zU)(I + zU)^-1` with `|z| = 1` is
/// Hermitian and shares the eigenvectors of `U`, so a Hermitian solver
/// handles degenerate spectra. Several rotations `z` are tried and the first
/// whose eigen-residual is below `1e-10` is kept. Phases are then read from
/// the Rayleigh quotients `v^H U v`.
pub fn unitary_eigen(u: &CMatrix) -> Result<UnitaryEigen> {
    if u.nrows() != u.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix is not square",
            u.nrows(),
            u.ncols()
        )));
    }
    let n = u.nrows();
    if n == 0 {
        return Ok(UnitaryEigen { phases: vec![], vectors: CMatrix::zeros(0, 0) });
    }
    let id = CMatrix::identity(n, n);
    let mut best: Option<(f64, UnitaryEigen)> = None;
    for &alpha in &[0.0, 0.9, 2.3, -1.7, 1.4, -0.4] {
        let zu = u * C64::from_polar(1.0, alpha);
        let Some(inv) = (&id + &zu).try_inverse() else { continue };
        let h = (&id - &zu) * inv * I;
        let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
        let eig = nalgebra::linalg::SymmetricEigen::new(h);
        let v = eig.eigenvectors;
        let uv = u * &v;
        let mut phases = Vec::with_capacity(n);
        let mut resid = 0.0_f64;
        for j in 0..n {
            let col = v.column(j);
            let lam = col.dotc(&uv.column(j));
            phases.push(wrap_phase(lam.arg()));
            let unit = lam / lam.norm();
            resid = resid.max((uv.column(j) - col * unit).norm());
        }
        let e = UnitaryEigen { phases, vectors: v };
        if resid < 1e-10 {
            return Ok(e);
        }
        if best.as_ref().map_or(true, |b| resid < b.0) {
            best = Some((resid, e));
        }
    }
    match best {
        Some((r, e)) if r < 1e-7 => Ok(e),
        _ => Err(Error::Singular("unitary eigen-decomposition did not converge".into())),
    }
}

/// Exponential `exp(i c H)` of a Hermitian matrix by eigen-decomposition.
pub fn expm_hermitian(h: &CMatrix, c: f64) -> CMatrix {
    let n = h.nrows();
    let eig = nalgebra::linalg::SymmetricEigen::new(h.clone());
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..n {
        let f = (I * c * eig.eigenvalues[j]).exp();
        for i in 0..n {
            scaled[(i, j)] *= f;
        }
    }
    scaled * eig.eigenvectors.adjoint()
}

/// Sparse operator in which every row has a diagonal entry and at most one
/// off-diagonal partner. Exponentials of the step Hamiltonians have this form.
#[derive(Debug, Clone)]
pub struct PairOperator {
    pub diag: Vec<C64>,
    pub partner: Vec<Option<usize>>,
    pub off: Vec<C64>,
}

impl PairOperator {
    /// Builds `exp(i c H)` when each row of `H` couples to at most one other
    /// row; returns `None` otherwise.
    pub fn exp_of(h: &CMatrix, c: f64) -> Option<Self> {
        let n = h.nrows();
        let mut partner = vec![None; n];
        for i in 0..n {
            for j in 0..n {
                if i != j && h[(i, j)] != C64::new(0.0, 0.0) {
                    if partner[i].is_some() {
                        return None;
                    }
                    partner[i] = Some(j);
                }
            }
        }
        for i in 0..n {
            if let Some(j) = partner[i] {
                if partner[j] != Some(i) {
                    return None;
                }
            }
        }
        let mut diag = vec![C64::new(0.0, 0.0); n];
        let mut off = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            match partner[i] {
                None => diag[i] = (I * c * h[(i, i)].re).exp(),
                Some(j) if i < j => {
                    let (d, o) = exp_2x2(h[(i, i)].re, h[(j, j)].re, h[(i, j)], c);
                    diag[i] = d[0];
                    diag[j] = d[1];
                    off[i] = o[0];
                    off[j] = o[1];
                }
                Some(_) => {}
            }
        }
        Some(Self { diag, partner, off })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `y = self * x`.
    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        for i in 0..self.dim() {
            let mut v = self.diag[i] * x[i];
            if let Some(j) = self.partner[i] {
                v += self.off[i] * x[j];
            }
            y[i] = v;
        }
    }

    /// Returns `self * m`.
    pub fn left_mul(&self, m: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            for i in 0..self.dim() {
                let mut v = self.diag[i] * m[(i, c)];
                if let Some(j) = self.partner[i] {
                    v += self.off[i] * m[(j, c)];
                }
                out[(i, c)] = v;
            }
        }
        out
    }

    pub fn to_dense(&self) -> CMatrix {
        let n = self.dim();
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if let Some(j) = self.partner[i] {
                m[(i, j)] = self.off[i];
            }
        }
        m
    }
}

/// `exp(i c [[a, b], [b*, d]])` for real `a`, `d`. Returns the diagonal pair
/// and the off-diagonal pair `(upper, lower)`.
pub fn exp_2x2(a: f64, d: f64, b: C64, c: f64) -> ([C64; 2], [C64; 2]) {
    let mu = 0.5 * (a + d);
    let delta = 0.5 * (a - d);
    let w = (delta * delta + b.norm_sqr()).sqrt();
    let phase = (I * c * mu).exp();
    let cw = (c * w).cos();
    // sin(c w) / w with the w -> 0 limit.
    let sw = if w * c.abs() < 1e-300 { c } else { (c * w).sin() / w };
    let d0 = phase * C64::new(cw, sw * delta);
    let d1 = phase * C64::new(cw, -sw * delta);
    let up = phase * I * sw * b;
    let lo = phase * I * sw * b.conj();
    ([d0, d1], [up, lo])
}

/// Banded matrix with `kl` sub- and `ku` super-diagonals, solved by Gaussian
/// elimination with partial pivoting. Each row keeps the window of columns
/// `[r - kl, r + kl + ku]` so that pivoting fill-in fits.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<C64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![C64::new(0.0, 0.0); n * width] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn slot(&self, r: usize, c: usize) -> Option<usize> {
        let lo = r as isize - self.kl as isize;
        let off = c as isize - lo;
        if off < 0 || off as usize >= self.width {
            None
        } else {
            Some(r * self.width + off as usize)
        }
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.slot(r, c).map(|s| self.data[s]).unwrap_or(C64::new(0.0, 0.0))
    }

    /// Adds `v` at `(r, c)`; the entry must lie inside the declared band.
    pub fn add(&mut self, r: usize, c: usize, v: C64) {
        assert!(
            c + self.kl >= r && c <= r + self.ku,
            "entry ({r}, {c}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(r, c).expect("inside storage window");
        self.data[s] += v;
    }

    /// Solves `A x = b`, consuming the matrix.
    pub fn solve(mut self, b: &[C64]) -> Result<Vec<C64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!("rhs has {} rows, matrix {}", b.len(), n)));
        }
        let mut rhs = b.to_vec();
        let scale = self.data.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        if scale == 0.0 {
            return Err(Error::Singular("zero matrix".into()));
        }
        let span = self.kl + self.ku;
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).norm();
            for r in k + 1..=last {
                let v = self.get(r, k).norm();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= scale * 1e-15 {
                return Err(Error::Singular(format!("pivot {best:e} at column {k}")));
            }
            let cmax = (k + span).min(n - 1);
            if p != k {
                for c in k..=cmax {
                    let sk = self.slot(k, c).unwrap();
                    let sp = self.slot(p, c).unwrap();
                    self.data.swap(sk, sp);
                }
                rhs.swap(k, p);
            }
            let piv = self.get(k, k);
            for r in k + 1..=last {
                let sr = self.slot(r, k).unwrap();
                let f = self.data[sr] / piv;
                if f == C64::new(0.0, 0.0) {
                    continue;
                }
                self.data[sr] = C64::new(0.0, 0.0);
                for c in k + 1..=cmax {
                    let u = self.get(k, c);
                    if u != C64::new(0.0, 0.0) {
                        let s = self.slot(r, c).unwrap();
                        self.data[s] -= f * u;
                    }
                }
                let rk = rhs[k];
                rhs[r] -= f * rk;
            }
        }
        let mut x = vec![C64::new(0.0, 0.0); n];
        for k in (0..n).rev() {
            let cmax = (k + span).min(n - 1);
            let mut s = rhs[k];
            for c in k + 1..=cmax {
                s -= self.get(k, c) * x[c];
            }
            x[k] = s / self.get(k, k);
        }
        Ok(x)
    }
}

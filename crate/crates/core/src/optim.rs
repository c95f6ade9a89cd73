//! Levenberg-Marquardt nonlinear least squares with a central-difference
//! Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative cost decrease falls below this.
    pub ftol: f64,
    /// Stop when the relative step falls below this.
    pub xtol: f64,
    /// Finite-difference step, relative for parameters above 1 in magnitude.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 500, ftol: 1e-15, xtol: 1e-12, fd_step: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub sse: f64,
    /// `s^2 (J^T J)^-1` with `s^2 = sse / (m - n)`; `None` if singular.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
}

impl LmResult {
    /// One-sigma parameter uncertainties.
    pub fn sigmas(&self) -> Option<Vec<f64>> {
        self.covariance.as_ref().map(|c| (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
    }
}

fn jacobian<F>(f: &F, x: &[f64], r0: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let m = r0.len();
    let n = x.len();
    let mut j = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    let mut rp = vec![0.0; m];
    let mut rm = vec![0.0; m];
    for k in 0..n {
        let h = step * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        f(&xp, &mut rp);
        xp[k] = x[k] - h;
        f(&xp, &mut rm);
        xp[k] = x[k];
        for i in 0..m {
            j[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    j
}

/// Minimizes `sum r_i(x)^2` where `f(x, r)` fills the `m` residuals.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], m: usize, opts: &LmOptions) -> Result<LmResult>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = x0.len();
    if m < n {
        return Err(Error::Fit(format!("{m} residuals for {n} parameters")));
    }
    let eval = |x: &[f64]| {
        let mut r = vec![0.0; m];
        f(x, &mut r);
        DVector::from_vec(r)
    };
    let mut x = x0.to_vec();
    let mut r = eval(&x);
    let mut sse = r.norm_squared();
    if !sse.is_finite() {
        return Err(Error::Fit("non-finite residuals at the starting point".into()));
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let j = jacobian(&f, &x, &r, opts.fd_step);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut improved = false;
        let mut small_step = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(delta) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            let rn = eval(&xn);
            let sn = rn.norm_squared();
            if sn.is_finite() && sn < sse {
                let rel = (sse - sn) / sse.max(1e-300);
                let step = delta.iter().zip(&x).map(|(d, a)| (d / a.abs().max(1.0)).abs()).fold(0.0, f64::max);
                x = xn;
                r = rn;
                sse = sn;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                small_step = rel < opts.ftol || step < opts.xtol;
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !improved || small_step || sse == 0.0 {
            break;
        }
    }
    let j = jacobian(&f, &x, &r, opts.fd_step);
    let dof = (m - n).max(1) as f64;
    let covariance = (j.transpose() * &j).try_inverse().map(|inv| inv * (sse / dof));
    Ok(LmResult { params: x, sse, covariance, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential_decay() {
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|&s| 2.5 * (-1.3 * s).exp() + 0.2).collect();
        let res = levenberg_marquardt(
            |p, r| {
                for i in 0..t.len() {
                    r[i] = p[0] * (-p[1] * t[i]).exp() + p[2] - y[i];
                }
            },
            &[1.0, 0.5, 0.0],
            t.len(),
            &LmOptions::default(),
        )
        .unwrap();
        assert!((res.params[0] - 2.5).abs() < 1e-8);
        assert!((res.params[1] - 1.3).abs() < 1e-8);
        assert!((res.params[2] - 0.2).abs() < 1e-8);
        assert!(res.sse < 1e-18);
    }

    #[test]
    fn covariance_matches_linear_theory() {
        // For a linear model the covariance is s^2 (X^T X)^-1 exactly.
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let noise = [0.1, -0.2, 0.05, 0.0, 0.3, -0.1, -0.05, 0.2, -0.3, 0.1];
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, e)| 1.0 + 2.0 * a + e).collect();
        let res = levenberg_marquardt(
            |p, r| {
                for i in 0..10 {
                    r[i] = p[0] + p[1] * x[i] - y[i];
                }
            },
            &[0.0, 0.0],
            10,
            &LmOptions::default(),
        )
        .unwrap();
        let xm = DMatrix::from_fn(10, 2, |i, k| if k == 0 { 1.0 } else { x[i] });
        let want = (xm.transpose() * &xm).try_inverse().unwrap() * (res.sse / 8.0);
        let got = res.covariance.unwrap();
        assert!((&got - &want).norm() < 1e-6 * want.norm());
    }

    #[test]
    fn too_few_residuals() {
        assert!(levenberg_marquardt(|_, _| {}, &[1.0, 2.0], 1, &LmOptions::default()).is_err());
    }
}

//! Small numerical utilities: linear regression and uniform-grid quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Ordinary least-squares line `y = slope x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl LinearFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid("linear fit needs at least two paired samples");
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx <= 0.0 {
        return invalid("linear fit abscissae are all equal");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(LinearFit { slope, intercept, r_squared })
}

/// Composite Simpson rule on `f` sampled at an odd number of uniform points.
pub fn simpson(f: &[f64], h: f64) -> Result<f64> {
    let n = f.len();
    if n < 3 || n % 2 == 0 {
        return invalid(format!("Simpson rule needs an odd sample count >= 3, got {n}"));
    }
    let mut s = f[0] + f[n - 1];
    for (i, v) in f.iter().enumerate().take(n - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    Ok(s * h / 3.0)
}

/// `n` uniformly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Median of a sample; `None` when empty.
pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-14 && (f.intercept + 2.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 2.0]).is_err());
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let x = linspace(-1.0, 2.0, 7);
        let f: Vec<f64> = x.iter().map(|t| t * t * t - t + 1.0).collect();
        let exact = (16.0 / 4.0 - 2.0 + 2.0) - (0.25 - 0.5 - 1.0);
        assert!((simpson(&f, 0.5).unwrap() - exact).abs() < 1e-13);
        assert!(simpson(&f[..6], 0.5).is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}

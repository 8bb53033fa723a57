//! Adaptive quadrature on finite intervals.
//!
//! Panels are estimated with a nested Gauss pair (7 and 15 Legendre nodes);
//! the difference of the two estimates drives bisection until the requested
//! absolute tolerance is met.  Legendre nodes are computed once by Newton
//! iteration on the recurrence, so there are no hard-coded tables to get
//! wrong.

use std::sync::OnceLock;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub max_depth: u32,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            abs_tol: 1e-9,
            max_depth: 48,
        }
    }
}

/// Legendre polynomial value and derivative at `x`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn rules() -> &'static ((Vec<f64>, Vec<f64>), (Vec<f64>, Vec<f64>)) {
    static RULES: OnceLock<((Vec<f64>, Vec<f64>), (Vec<f64>, Vec<f64>))> = OnceLock::new();
    RULES.get_or_init(|| (gauss_rule(7), gauss_rule(15)))
}

fn panel<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let ((n7, w7), (n15, w15)) = rules();
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let eval = |nodes: &[f64], weights: &[f64]| -> Result<f64> {
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            let v = f(mid + half * x);
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "integrand returned a non-finite value at x = {}",
                    mid + half * x
                )));
            }
            acc += w * v;
        }
        Ok(acc * half)
    };
    let coarse = eval(n7, w7)?;
    let fine = eval(n15, w15)?;
    Ok((fine, (fine - coarse).abs()))
}

fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    tol: f64,
    depth: u32,
    cfg: &QuadConfig,
) -> Result<f64> {
    let (value, err) = panel(f, lo, hi)?;
    if err <= tol {
        return Ok(value);
    }
    if depth >= cfg.max_depth {
        return Err(Error::Numerical(format!(
            "quadrature failed to reach tolerance on [{lo}, {hi}]: error estimate {err:.3e} > {tol:.3e}"
        )));
    }
    let mid = 0.5 * (lo + hi);
    let left = recurse(f, lo, mid, 0.5 * tol, depth + 1, cfg)?;
    let right = recurse(f, mid, hi, 0.5 * tol, depth + 1, cfg)?;
    Ok(left + right)
}

/// Integrates `f` over `[lo, hi]` to the configured absolute tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, cfg: &QuadConfig) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Domain(format!(
            "quadrature needs a finite interval with lo < hi, got [{lo}, {hi}]"
        )));
    }
    recurse(&f, lo, hi, cfg.abs_tol, 0, cfg)
}

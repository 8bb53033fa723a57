//! Post-solution inference: sandwich covariances, studentized statistics,
//! confidence intervals, and calculators for the theoretical limit objects
//! the Monte Carlo diagnostics compare against.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimating::EstimatingFunction;
use crate::params::ParameterSpace;
use crate::quad::{integrate, QuadConfig};
use crate::simulate::{ou_stationary_sd, SdeModel};
use crate::stats::norm_quantile;

/// Smallest eigenvalue used when inverting the square root of `V_hat`.
const VHAT_EIGEN_FLOOR: f64 = 1e-12;

/// How to obtain the variance estimate of the scaled estimating function.
#[derive(Clone, Debug)]
pub enum VhatMode {
    /// Outer product of the summands at the root, scaled on both sides.
    /// Valid whenever the summands are martingale-type.
    OuterProduct,
    /// Caller-supplied `p x p` matrix.
    Supplied(DMatrix<f64>),
}

/// Inference summary at a solved root.
#[derive(Clone, Debug, Serialize)]
pub struct AsymptoticReport {
    pub theta_hat: Vec<f64>,
    /// Diagonal of the scaling matrix evaluated on the dataset.
    #[serde(skip)]
    pub a_n: Vec<f64>,
    /// Jacobian of the estimating function at the root.
    #[serde(rename = "W_hat")]
    pub w_hat: Vec<Vec<f64>>,
    /// Variance estimate of the scaled estimating function.
    #[serde(rename = "V_hat")]
    pub v_hat: Vec<Vec<f64>>,
    /// `V_hat^{-1/2} A_n dG(theta_hat) (theta_hat - theta_ref)`; zero when
    /// no reference point was supplied.
    pub studentized: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub level: f64,
    /// Plug-in covariance of `theta_hat` (unscaled), the sandwich
    /// `J^{-1} A_n^{-1} V_hat A_n^{-1} J^{-T}`.
    #[serde(skip)]
    pub cov: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn inv_sqrt_psd(v: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = v.clone().symmetric_eigen();
    let vals: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|l| 1.0 / l.max(VHAT_EIGEN_FLOOR).sqrt())
        .collect();
    let d = DMatrix::from_diagonal(&DVector::from_vec(vals));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Builds the full inference report at a root: Jacobian, variance estimate,
/// sandwich covariance, studentized pivot against `theta_ref`, and
/// per-coordinate confidence intervals at `level`.
pub fn sandwich(
    g: &EstimatingFunction,
    data: &Dataset,
    theta_hat: &[f64],
    vhat: &VhatMode,
    level: f64,
    theta_ref: Option<&[f64]>,
) -> Result<AsymptoticReport> {
    let p = g.dim();
    if theta_hat.len() != p {
        return Err(Error::Shape(format!(
            "root has length {}, expected {p}",
            theta_hat.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    if let Some(r) = theta_ref {
        if r.len() != p {
            return Err(Error::Shape(format!(
                "reference point has length {}, expected {p}",
                r.len()
            )));
        }
    }

    let a = g.scaling().diagonal(data)?;
    let jac = g.jacobian(theta_hat, data)?;

    let mut v = match vhat {
        VhatMode::OuterProduct => {
            let summands = g.summands(theta_hat, data)?;
            let mut v = DMatrix::zeros(p, p);
            for s in &summands {
                for r in 0..p {
                    for c in 0..p {
                        v[(r, c)] += s[r] * s[c];
                    }
                }
            }
            for r in 0..p {
                for c in 0..p {
                    v[(r, c)] *= a[r] * a[c];
                }
            }
            v
        }
        VhatMode::Supplied(m) => {
            if m.nrows() != p || m.ncols() != p {
                return Err(Error::Shape(format!(
                    "supplied variance is {}x{}, expected {p}x{p}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            m.clone()
        }
    };
    // The Gram construction is symmetric up to rounding; enforce it exactly.
    for r in 0..p {
        for c in 0..r {
            let s = 0.5 * (v[(r, c)] + v[(c, r)]);
            v[(r, c)] = s;
            v[(c, r)] = s;
        }
    }

    let lu = jac.clone().full_piv_lu();
    if !lu.is_invertible() {
        return Err(Error::Singular(
            "noninvertible Jacobian at the root: cannot studentize".into(),
        ));
    }
    let jac_inv = lu.try_inverse().expect("invertibility checked");

    // Sandwich: J^{-1} (A^{-1} V A^{-1}) J^{-T} estimates the covariance of
    // the root itself.
    let mut middle = v.clone();
    for r in 0..p {
        for c in 0..p {
            middle[(r, c)] /= a[r] * a[c];
        }
    }
    let cov = &jac_inv * middle * jac_inv.transpose();

    let studentized = match theta_ref {
        Some(refp) => {
            let diff = DVector::from_iterator(p, theta_hat.iter().zip(refp).map(|(t, r)| t - r));
            let mut scaled = &jac * diff;
            for (i, s) in scaled.iter_mut().enumerate() {
                *s *= a[i];
            }
            (inv_sqrt_psd(&v) * scaled).iter().copied().collect()
        }
        None => vec![0.0; p],
    };

    let z = norm_quantile(0.5 * (1.0 + level))?;
    let mut ci_lower = Vec::with_capacity(p);
    let mut ci_upper = Vec::with_capacity(p);
    for j in 0..p {
        let half = z * cov[(j, j)].max(0.0).sqrt();
        ci_lower.push(theta_hat[j] - half);
        ci_upper.push(theta_hat[j] + half);
    }

    Ok(AsymptoticReport {
        theta_hat: theta_hat.to_vec(),
        a_n: a,
        w_hat: rows(&jac),
        v_hat: rows(&v),
        studentized,
        ci_lower,
        ci_upper,
        level,
        cov: rows(&cov),
    })
}

/// The probability limit of the first-order least-squares root when the data
/// actually follow a stationary second-order autoregression: the lag-one
/// autocorrelation `theta1 / (1 - theta2)`.
pub fn theta_bar_ar2_misspec(theta1: f64, theta2: f64) -> Result<f64> {
    let stationary =
        theta2.abs() < 1.0 && theta1 + theta2 < 1.0 && theta2 - theta1 < 1.0;
    if !stationary {
        return Err(Error::Domain(format!(
            "({theta1}, {theta2}) lies outside the stationarity region"
        )));
    }
    Ok(theta1 / (1.0 - theta2))
}

/// The probability limit of the Euler least-squares root when the data come
/// from the exact mean-reverting transition at spacing `delta`:
/// `(1 - exp(-theta0 delta)) / delta`.
pub fn theta_bar_ou(theta0: f64, delta: f64) -> Result<f64> {
    if !(theta0 > 0.0 && delta > 0.0) {
        return Err(Error::Domain(format!(
            "need theta0 > 0 and delta > 0, got ({theta0}, {delta})"
        )));
    }
    Ok((1.0 - (-theta0 * delta).exp()) / delta)
}

/// Path-dependent limit objects for the fixed-span design, computed as
/// left-endpoint Riemann sums along the supplied path.
#[derive(Clone, Copy, Debug)]
pub struct FixedSpanLimit {
    /// `G(beta)`: the limit of the estimating function scaled by nothing,
    /// as an integral along the path.
    pub g: f64,
    /// `W(beta) = dG/dbeta` along the same path.
    pub w: f64,
    /// Variance of the mixed-normal limit: `-2 T W(beta0)`.
    pub var_z: f64,
}

/// Evaluates the fixed-span limit function, its derivative, and the limit
/// variance along `path`.
pub fn limit_fixed_t(
    model: &SdeModel,
    path: &Dataset,
    beta: f64,
    beta0: f64,
) -> Result<FixedSpanLimit> {
    let x = path.scalar_values()?;
    if x.len() < 2 {
        return Err(Error::Shape("path needs at least two points".into()));
    }
    let delta = path.delta();
    if delta <= 0.0 {
        return Err(Error::Domain("path needs a positive time step".into()));
    }
    let check = |c: f64, x: f64, b: f64| -> Result<f64> {
        if !c.is_finite() || c < 1e-12 {
            return Err(Error::Domain(format!(
                "squared diffusion must stay above 1e-12, got c({x}; {b}) = {c}"
            )));
        }
        Ok(c)
    };
    let (mut g, mut w, mut var_z) = (0.0, 0.0, 0.0);
    for &xi in &x[..x.len() - 1] {
        let c = check(model.csq(xi, beta), xi, beta)?;
        let c0 = check(model.csq(xi, beta0), xi, beta0)?;
        let dc = model.csq_db(xi, beta);
        let dcc = model.csq_dbb(xi, beta);
        let dc0 = model.csq_db(xi, beta0);
        let gap = c0 - c;
        g += delta * dc / (c * c) * gap;
        w += delta * ((dcc / (c * c) - 2.0 * dc * dc / (c * c * c)) * gap - dc * dc / (c * c));
        var_z += delta * 2.0 * dc0 * dc0 / (c0 * c0);
    }
    Ok(FixedSpanLimit { g, w, var_z })
}

/// Limit objects for the two-parameter ergodic design, as integrals against
/// the stationary law.
#[derive(Clone, Debug)]
pub struct ErgodicLimit {
    /// `(G^1, G^2)` at the evaluation parameter.
    pub g: Vec<f64>,
    /// The 2x2 derivative matrix; its lower-left entry is identically zero.
    pub w: DMatrix<f64>,
    /// Diagonal limit variance at the true parameter.
    pub var_z: DMatrix<f64>,
}

/// Evaluates the ergodic limit function, its derivative matrix, and the
/// limit variances by adaptive quadrature against `density` over `range`.
/// The density must integrate to 1 over the range to within 1e-6.
pub fn limit_ergodic<F: Fn(f64) -> f64>(
    model: &SdeModel,
    density: F,
    theta: &[f64],
    theta0: &[f64],
    range: (f64, f64),
    quad: &QuadConfig,
) -> Result<ErgodicLimit> {
    if theta.len() != 2 || theta0.len() != 2 {
        return Err(Error::Shape("this design has exactly two parameters".into()));
    }
    let (lo, hi) = range;
    let mass = integrate(|x| density(x), lo, hi, quad)?;
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "density integrates to {mass} over [{lo}, {hi}], expected 1"
        )));
    }
    let (alpha, beta) = (theta[0], theta[1]);
    let (alpha0, beta0) = (theta0[0], theta0[1]);

    let guarded = |x: f64, b: f64| {
        let c = model.csq(x, b);
        if c.is_finite() && c >= 1e-12 {
            c
        } else {
            f64::NAN
        }
    };

    let g1 = integrate(
        |x| {
            let c = guarded(x, beta);
            model.drift_da(x, alpha) / c * (model.drift(x, alpha0) - model.drift(x, alpha))
                * density(x)
        },
        lo,
        hi,
        quad,
    )?;
    let g2 = integrate(
        |x| {
            let c = guarded(x, beta);
            model.csq_db(x, beta) / (c * c) * (guarded(x, beta0) - c) * density(x)
        },
        lo,
        hi,
        quad,
    )?;
    let w11 = integrate(
        |x| {
            let c = guarded(x, beta);
            let da = model.drift_da(x, alpha);
            (model.drift_daa(x, alpha) / c
                * (model.drift(x, alpha0) - model.drift(x, alpha))
                - da * da / c)
                * density(x)
        },
        lo,
        hi,
        quad,
    )?;
    let w12 = integrate(
        |x| {
            let c = guarded(x, beta);
            -model.drift_da(x, alpha) * model.csq_db(x, beta) / (c * c)
                * (model.drift(x, alpha0) - model.drift(x, alpha))
                * density(x)
        },
        lo,
        hi,
        quad,
    )?;
    let w22 = integrate(
        |x| {
            let c = guarded(x, beta);
            let dc = model.csq_db(x, beta);
            ((model.csq_dbb(x, beta) / (c * c) - 2.0 * dc * dc / (c * c * c))
                * (guarded(x, beta0) - c)
                - dc * dc / (c * c))
                * density(x)
        },
        lo,
        hi,
        quad,
    )?;

    // Variances of the limit at the true parameter; only the diagonal terms
    // of W enter because the mixed entry vanishes there.
    let w11_0 = integrate(
        |x| {
            let c = guarded(x, beta0);
            let da = model.drift_da(x, alpha0);
            -da * da / c * density(x)
        },
        lo,
        hi,
        quad,
    )?;
    let w22_0 = integrate(
        |x| {
            let c = guarded(x, beta0);
            let dc = model.csq_db(x, beta0);
            -dc * dc / (c * c) * density(x)
        },
        lo,
        hi,
        quad,
    )?;

    Ok(ErgodicLimit {
        g: vec![g1, g2],
        w: DMatrix::from_row_slice(2, 2, &[w11, w12, 0.0, w22]),
        var_z: DMatrix::from_row_slice(2, 2, &[-w11_0, 0.0, 0.0, -2.0 * w22_0]),
    })
}

/// Stationary density of the mean-reverting model and a quadrature range
/// covering its effective support (ten standard deviations).
pub fn ou_stationary_density(
    alpha0: f64,
    beta0: f64,
) -> Result<(impl Fn(f64) -> f64 + Clone, (f64, f64))> {
    if !(alpha0 > 0.0 && beta0 > 0.0) {
        return Err(Error::Domain(format!(
            "stationary law needs alpha0 > 0 and beta0 > 0, got ({alpha0}, {beta0})"
        )));
    }
    let sd = ou_stationary_sd(alpha0, beta0);
    let f = move |x: f64| crate::stats::norm_pdf(x / sd) / sd;
    Ok((f, (-10.0 * sd, 10.0 * sd)))
}

/// Convenience: the implied asymptotic variance of the scaled root in one
/// dimension, `varZ / W^2`.
pub fn implied_avar_1d(w: f64, var_z: f64) -> Result<f64> {
    if w == 0.0 {
        return Err(Error::Singular("limit derivative is zero".into()));
    }
    Ok(var_z / (w * w))
}

/// A level-`level` two-sided interval check used by coverage counters.
pub fn interval_covers(report: &AsymptoticReport, target: &[f64]) -> Result<Vec<bool>> {
    if target.len() != report.theta_hat.len() {
        return Err(Error::Shape(format!(
            "target has length {}, report has {}",
            target.len(),
            report.theta_hat.len()
        )));
    }
    Ok(target
        .iter()
        .enumerate()
        .map(|(j, t)| report.ci_lower[j] <= *t && *t <= report.ci_upper[j])
        .collect())
}

/// Validates that a focus point is usable for the given space.
pub fn validate_focus(space: &ParameterSpace, rho: &[f64]) -> Result<()> {
    if !space.contains(rho) {
        return Err(Error::Domain(format!(
            "focus point {rho:?} lies outside the parameter space"
        )));
    }
    Ok(())
}

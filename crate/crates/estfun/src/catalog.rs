//! Ready-made estimating functions.
//!
//! Six families cover the designs the crate targets:
//!
//! * least squares for a first-order autoregression,
//! * least squares for the Euler scheme of a mean-reverting diffusion,
//! * ergodic moment conditions built from a user kernel,
//! * martingale kernels for longitudinal panels,
//! * quadratic-variation matching of the diffusion coefficient on a fixed
//!   time span sampled ever more finely,
//! * the two-parameter drift/diffusion version under an ergodic sampling
//!   scheme with shrinking step.
//!
//! Every family ships an analytic Jacobian and exposes its summands, so
//! outer-product covariance estimates and studentization work uniformly.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimating::{EstimatingFunction, EvalFn, JacobianFn, SummandsFn};
use crate::params::ParameterSpace;
use crate::scaling::ScalingMatrix;
use crate::simulate::SdeModel;

fn increments_or_err<'a>(data: &'a Dataset, what: &str) -> Result<&'a [f64]> {
    let x = data.scalar_values()?;
    if x.len() < 2 {
        return Err(Error::Shape(format!("{what} needs at least one increment")));
    }
    Ok(x)
}

fn windowed(data: &Dataset, r: usize) -> Result<&[f64]> {
    let x = data.scalar_values()?;
    if x.len() < r {
        return Err(Error::Shape(format!(
            "need at least {r} observations for windows of length {r}, got {}",
            x.len()
        )));
    }
    Ok(x)
}

fn panel_subjects(data: &Dataset, m: usize) -> Result<&[Vec<f64>]> {
    let s = data.subjects()?;
    if s[0].len() != m + 1 {
        return Err(Error::Shape(format!(
            "kernel expects {} observations per subject, panel has {}",
            m + 1,
            s[0].len()
        )));
    }
    Ok(s)
}

fn energy_or_err(x: &[f64]) -> Result<f64> {
    let den: f64 = x[..x.len() - 1].iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::Domain(
            "degenerate data: regressor sum of squares is zero".into(),
        ));
    }
    Ok(den)
}

/// Least-squares estimating function for `x_i = theta x_{i-1} + noise`:
/// `G_n(theta) = n^{-1} sum x_{i-1} (x_i - theta x_{i-1})`.
pub fn make_ar1_ls() -> EstimatingFunction {
    let space = ParameterSpace::boxed(vec![-1.0], vec![1.0]).expect("static bounds");
    let eval: EvalFn = Arc::new(|t: &[f64], data: &Dataset| {
        let x = increments_or_err(data, "ar1 least squares")?;
        energy_or_err(x)?;
        let n = (x.len() - 1) as f64;
        let theta = t[0];
        let mut acc = 0.0;
        for w in x.windows(2) {
            acc += w[0] * (w[1] - theta * w[0]);
        }
        Ok(vec![acc / n])
    });
    let jac: JacobianFn = Arc::new(|_: &[f64], data: &Dataset| {
        let x = increments_or_err(data, "ar1 least squares")?;
        let den = energy_or_err(x)?;
        let n = (x.len() - 1) as f64;
        Ok(DMatrix::from_element(1, 1, -den / n))
    });
    let summands: SummandsFn = Arc::new(|t: &[f64], data: &Dataset| {
        let x = increments_or_err(data, "ar1 least squares")?;
        energy_or_err(x)?;
        let n = (x.len() - 1) as f64;
        let theta = t[0];
        Ok(x.windows(2)
            .map(|w| vec![w[0] * (w[1] - theta * w[0]) / n])
            .collect())
    });
    EstimatingFunction::new(1, 2, space, ScalingMatrix::SqrtN { dim: 1 }, eval, summands)
        .expect("static shape")
        .with_jacobian(jac)
}

/// Least-squares estimating function for the Euler transition of a
/// mean-reverting diffusion observed at spacing `delta`:
/// `G_n(theta) = n^{-1} sum x_{i-1} (x_i - (1 - theta delta) x_{i-1})`.
pub fn make_ou_euler_ls(delta: f64) -> Result<EstimatingFunction> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!(
            "Euler least squares needs a positive sampling step, got {delta}"
        )));
    }
    let step_check = move |data: &Dataset| -> Result<()> {
        if (data.delta() - delta).abs() > 1e-12 * delta.max(1.0) {
            return Err(Error::Shape(format!(
                "dataset spacing {} does not match the estimator's step {delta}",
                data.delta()
            )));
        }
        Ok(())
    };
    let cap = 2.0 / delta;
    let space = ParameterSpace::boxed(vec![-cap], vec![cap])?;
    let eval: EvalFn = Arc::new(move |t: &[f64], data: &Dataset| {
        step_check(data)?;
        let x = increments_or_err(data, "Euler least squares")?;
        energy_or_err(x)?;
        let n = (x.len() - 1) as f64;
        let theta = t[0];
        let mut acc = 0.0;
        for w in x.windows(2) {
            acc += w[0] * (w[1] - (1.0 - theta * delta) * w[0]);
        }
        Ok(vec![acc / n])
    });
    let jac: JacobianFn = Arc::new(move |_: &[f64], data: &Dataset| {
        let x = increments_or_err(data, "Euler least squares")?;
        let den = energy_or_err(x)?;
        let n = (x.len() - 1) as f64;
        Ok(DMatrix::from_element(1, 1, delta * den / n))
    });
    let summands: SummandsFn = Arc::new(move |t: &[f64], data: &Dataset| {
        step_check(data)?;
        let x = increments_or_err(data, "Euler least squares")?;
        energy_or_err(x)?;
        let n = (x.len() - 1) as f64;
        let theta = t[0];
        Ok(x.windows(2)
            .map(|w| vec![w[0] * (w[1] - (1.0 - theta * delta) * w[0]) / n])
            .collect())
    });
    Ok(
        EstimatingFunction::new(1, 2, space, ScalingMatrix::SqrtN { dim: 1 }, eval, summands)?
            .with_jacobian(jac),
    )
}

type WindowKernel = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type WindowKernelJac = Arc<dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync>;

/// Moment condition applied to sliding windows of a stationary path.
#[derive(Clone)]
pub struct MomentKernel {
    /// Parameter dimension.
    pub dim: usize,
    /// Window length.
    pub lag: usize,
    pub space: ParameterSpace,
    /// `g(window; theta)`, length `dim`.
    pub g: WindowKernel,
    /// Optional `d g / d theta`, a `dim x dim` matrix.
    pub dg: Option<WindowKernelJac>,
}

impl MomentKernel {
    /// `g(x; theta) = x - theta`: the mean.
    pub fn mean(space: ParameterSpace) -> Self {
        MomentKernel {
            dim: 1,
            lag: 1,
            space,
            g: Arc::new(|w, t| vec![w[0] - t[0]]),
            dg: Some(Arc::new(|_, _| DMatrix::from_element(1, 1, -1.0))),
        }
    }

    /// Mean and centered second moment.
    pub fn mean_var(space: ParameterSpace) -> Self {
        MomentKernel {
            dim: 2,
            lag: 1,
            space,
            g: Arc::new(|w, t| vec![w[0] - t[0], w[0] * w[0] - t[0] * t[0] - t[1]]),
            dg: Some(Arc::new(|_, t| {
                DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -2.0 * t[0], -1.0])
            })),
        }
    }
}

/// Averages a moment kernel over all windows:
/// `G_n(theta) = n^{-1} sum_i g(x_i, ..., x_{i+r-1}; theta)`
/// where `n` counts observations, so windows of length `r > 1` contribute
/// `n - r + 1` terms.
pub fn make_ergodic_moment(kernel: &MomentKernel) -> Result<EstimatingFunction> {
    if kernel.space.dim() != kernel.dim {
        return Err(Error::Shape(format!(
            "kernel dimension {} does not match its space ({})",
            kernel.dim,
            kernel.space.dim()
        )));
    }
    let r = kernel.lag;
    if r == 0 {
        return Err(Error::Shape("window length must be at least 1".into()));
    }
    let dim = kernel.dim;

    let g = kernel.g.clone();
    let eval: EvalFn = Arc::new(move |t: &[f64], data: &Dataset| {
        let x = windowed(data, r)?;
        let n = x.len() as f64;
        let mut acc = vec![0.0; dim];
        for w in x.windows(r) {
            for (a, v) in acc.iter_mut().zip(g(w, t)) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= n;
        }
        Ok(acc)
    });
    let g = kernel.g.clone();
    let summands: SummandsFn = Arc::new(move |t: &[f64], data: &Dataset| {
        let x = windowed(data, r)?;
        let n = x.len() as f64;
        Ok(x.windows(r)
            .map(|w| g(w, t).into_iter().map(|v| v / n).collect())
            .collect())
    });

    let mut out = EstimatingFunction::new(
        dim,
        r,
        kernel.space.clone(),
        ScalingMatrix::SqrtN { dim },
        eval,
        summands,
    )?;
    if let Some(dg) = &kernel.dg {
        let dg = dg.clone();
        let jac: JacobianFn = Arc::new(move |t: &[f64], data: &Dataset| {
            let x = windowed(data, r)?;
            let n = x.len() as f64;
            let mut acc = DMatrix::zeros(dim, dim);
            for w in x.windows(r) {
                acc += dg(w, t);
            }
            Ok(acc / n)
        });
        out = out.with_jacobian(jac);
    }
    Ok(out)
}

type PairKernel = Arc<dyn Fn(f64, f64, &[f64]) -> Vec<f64> + Send + Sync>;
type PairKernelJac = Arc<dyn Fn(f64, f64, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// Transition kernel for longitudinal panels: `h(x, y; theta)` has
/// conditional mean zero along each subject's consecutive pairs at the true
/// parameter.
#[derive(Clone)]
pub struct MartingaleKernel {
    /// Transitions per subject.
    pub m: usize,
    pub space: ParameterSpace,
    pub h: PairKernel,
    pub dh: Option<PairKernelJac>,
}

impl MartingaleKernel {
    /// Kernel `h(x, y; theta) = x (y - exp(-theta delta) x)` matched to the
    /// mean-reverting transition mean.
    pub fn ou_linear(delta: f64, m: usize) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Domain(format!(
                "kernel needs a positive sampling step, got {delta}"
            )));
        }
        Ok(MartingaleKernel {
            m,
            space: ParameterSpace::positive(1),
            h: Arc::new(move |x, y, t| vec![x * (y - (-t[0] * delta).exp() * x)]),
            dh: Some(Arc::new(move |x, _, t| {
                DMatrix::from_element(1, 1, delta * (-t[0] * delta).exp() * x * x)
            })),
        })
    }
}

/// Sums a martingale kernel over each subject's transitions and averages
/// over subjects: `G_n(theta) = n^{-1} sum_i sum_j h(y_{i,j-1}, y_{i,j}; theta)`.
pub fn make_longitudinal(kernel: &MartingaleKernel) -> Result<EstimatingFunction> {
    if kernel.m == 0 {
        return Err(Error::Shape("kernel needs at least one transition per subject".into()));
    }
    let dim = kernel.space.dim();
    let m = kernel.m;

    let h = kernel.h.clone();
    let eval: EvalFn = Arc::new(move |t: &[f64], data: &Dataset| {
        let subs = panel_subjects(data, m)?;
        let n = subs.len() as f64;
        let mut acc = vec![0.0; dim];
        for subj in subs {
            for w in subj.windows(2) {
                for (a, v) in acc.iter_mut().zip(h(w[0], w[1], t)) {
                    *a += v;
                }
            }
        }
        for a in &mut acc {
            *a /= n;
        }
        Ok(acc)
    });
    let h = kernel.h.clone();
    let summands: SummandsFn = Arc::new(move |t: &[f64], data: &Dataset| {
        let subs = panel_subjects(data, m)?;
        let n = subs.len() as f64;
        Ok(subs
            .iter()
            .map(|subj| {
                let mut acc = vec![0.0; dim];
                for w in subj.windows(2) {
                    for (a, v) in acc.iter_mut().zip(h(w[0], w[1], t)) {
                        *a += v;
                    }
                }
                acc.into_iter().map(|v| v / n).collect()
            })
            .collect())
    });

    let mut out = EstimatingFunction::new(
        dim,
        2,
        kernel.space.clone(),
        ScalingMatrix::SqrtN { dim },
        eval,
        summands,
    )?;
    if let Some(dh) = &kernel.dh {
        let dh = dh.clone();
        let jac: JacobianFn = Arc::new(move |t: &[f64], data: &Dataset| {
            let subs = panel_subjects(data, m)?;
            let n = subs.len() as f64;
            let mut acc = DMatrix::zeros(dim, dim);
            for subj in subs {
                for w in subj.windows(2) {
                    acc += dh(w[0], w[1], t);
                }
            }
            Ok(acc / n)
        });
        out = out.with_jacobian(jac);
    }
    Ok(out)
}

fn csq_checked(model: &SdeModel, x: f64, beta: f64) -> Result<f64> {
    let c = model.csq(x, beta);
    if !c.is_finite() || c < 1e-12 {
        return Err(Error::Domain(format!(
            "squared diffusion must stay above 1e-12, got c({x}; {beta}) = {c}"
        )));
    }
    Ok(c)
}

/// Quadratic-variation matching of the diffusion parameter on a fixed time
/// span: the unnormalized sum
/// `G_n(beta) = sum_i (dc/c^2)(x_{i-1}; beta) ((x_i - x_{i-1})^2 - delta c(x_{i-1}; beta))`.
pub fn make_hf_fixed_t(model: &SdeModel) -> EstimatingFunction {
    let space = ParameterSpace::positive(1);
    let m = model.clone();
    let eval: EvalFn = Arc::new(move |t: &[f64], data: &Dataset| {
        let x = increments_or_err(data, "quadratic-variation matching")?;
        let delta = data.delta();
        let beta = t[0];
        let mut acc = 0.0;
        for w in x.windows(2) {
            let c = csq_checked(&m, w[0], beta)?;
            let d = w[1] - w[0];
            acc += m.csq_db(w[0], beta) / (c * c) * (d * d - delta * c);
        }
        Ok(vec![acc])
    });
    let m = model.clone();
    let jac: JacobianFn = Arc::new(move |t: &[f64], data: &Dataset| {
        let x = increments_or_err(data, "quadratic-variation matching")?;
        let delta = data.delta();
        let beta = t[0];
        let mut acc = 0.0;
        for w in x.windows(2) {
            let c = csq_checked(&m, w[0], beta)?;
            let dc = m.csq_db(w[0], beta);
            let dcc = m.csq_dbb(w[0], beta);
            let d = w[1] - w[0];
            let weight_db = dcc / (c * c) - 2.0 * dc * dc / (c * c * c);
            acc += weight_db * (d * d - delta * c) - dc / (c * c) * delta * dc;
        }
        Ok(DMatrix::from_element(1, 1, acc))
    });
    let m = model.clone();
    let summands: SummandsFn = Arc::new(move |t: &[f64], data: &Dataset| {
        let x = increments_or_err(data, "quadratic-variation matching")?;
        let delta = data.delta();
        let beta = t[0];
        x.windows(2)
            .map(|w| {
                let c = csq_checked(&m, w[0], beta)?;
                let d = w[1] - w[0];
                Ok(vec![m.csq_db(w[0], beta) / (c * c) * (d * d - delta * c)])
            })
            .collect()
    });
    EstimatingFunction::new(1, 2, space, ScalingMatrix::SqrtN { dim: 1 }, eval, summands)
        .expect("static shape")
        .with_jacobian(jac)
}

/// Drift and diffusion parameters under ergodic sampling with shrinking
/// step.  The first component matches conditional means at the time-span
/// rate, the second is the fixed-span component divided by the span:
///
/// `G^1(theta) = T_n^{-1} sum_i (da/c)(x_{i-1}) (x_i - x_{i-1} - delta a(x_{i-1}; alpha))`
/// `G^2(theta) = T_n^{-1} sum_i (dc/c^2)(x_{i-1}) ((x_i - x_{i-1})^2 - delta c(x_{i-1}; beta))`
pub fn make_hf_ergodic(model: &SdeModel) -> EstimatingFunction {
    let space = ParameterSpace::mapped(vec![
        crate::params::CoordMap::Identity,
        crate::params::CoordMap::Log,
    ])
    .expect("static maps");

    let span = |data: &Dataset| -> Result<f64> {
        let t = data.time_span();
        if t <= 0.0 {
            return Err(Error::Domain(
                "ergodic high-frequency design needs a positive time span".into(),
            ));
        }
        Ok(t)
    };

    let m = model.clone();
    let eval: EvalFn = Arc::new(move |t: &[f64], data: &Dataset| {
        let x = increments_or_err(data, "ergodic high-frequency design")?;
        let tn = span(data)?;
        let delta = data.delta();
        let (alpha, beta) = (t[0], t[1]);
        let mut g1 = 0.0;
        let mut g2 = 0.0;
        for w in x.windows(2) {
            let c = csq_checked(&m, w[0], beta)?;
            let d = w[1] - w[0];
            g1 += m.drift_da(w[0], alpha) / c * (d - delta * m.drift(w[0], alpha));
            g2 += m.csq_db(w[0], beta) / (c * c) * (d * d - delta * c);
        }
        Ok(vec![g1 / tn, g2 / tn])
    });
    let m = model.clone();
    let jac: JacobianFn = Arc::new(move |t: &[f64], data: &Dataset| {
        let x = increments_or_err(data, "ergodic high-frequency design")?;
        let tn = span(data)?;
        let delta = data.delta();
        let (alpha, beta) = (t[0], t[1]);
        let mut j = DMatrix::zeros(2, 2);
        for w in x.windows(2) {
            let c = csq_checked(&m, w[0], beta)?;
            let dc = m.csq_db(w[0], beta);
            let dcc = m.csq_dbb(w[0], beta);
            let da = m.drift_da(w[0], alpha);
            let daa = m.drift_daa(w[0], alpha);
            let d = w[1] - w[0];
            let resid1 = d - delta * m.drift(w[0], alpha);
            j[(0, 0)] += daa / c * resid1 - da * da * delta / c;
            j[(0, 1)] += -da * dc / (c * c) * resid1;
            let weight_db = dcc / (c * c) - 2.0 * dc * dc / (c * c * c);
            j[(1, 1)] += weight_db * (d * d - delta * c) - dc / (c * c) * delta * dc;
        }
        Ok(j / tn)
    });
    let m = model.clone();
    let summands: SummandsFn = Arc::new(move |t: &[f64], data: &Dataset| {
        let x = increments_or_err(data, "ergodic high-frequency design")?;
        let tn = span(data)?;
        let delta = data.delta();
        let (alpha, beta) = (t[0], t[1]);
        x.windows(2)
            .map(|w| {
                let c = csq_checked(&m, w[0], beta)?;
                let d = w[1] - w[0];
                Ok(vec![
                    m.drift_da(w[0], alpha) / c * (d - delta * m.drift(w[0], alpha)) / tn,
                    m.csq_db(w[0], beta) / (c * c) * (d * d - delta * c) / tn,
                ])
            })
            .collect()
    });
    EstimatingFunction::new(2, 2, space, ScalingMatrix::SqrtSpanSqrtN, eval, summands)
        .expect("static shape")
        .with_jacobian(jac)
}

/// Catalog lookup by id, as used by the command line.  `delta` is required
/// by the step-dependent families.
pub fn standard(id: &str, delta: Option<f64>) -> Result<EstimatingFunction> {
    let need_delta = || {
        delta
            .filter(|d| *d > 0.0)
            .ok_or_else(|| Error::Config(format!("estimator '{id}' needs a positive sampling step")))
    };
    match id {
        "ar1_ls" => Ok(make_ar1_ls()),
        "ou_euler_ls" => make_ou_euler_ls(need_delta()?),
        "moment_mean" => make_ergodic_moment(&MomentKernel::mean(ParameterSpace::boxed(
            vec![-1e6],
            vec![1e6],
        )?)),
        "moment_meanvar" => make_ergodic_moment(&MomentKernel::mean_var(ParameterSpace::boxed(
            vec![-1e6, 1e-9],
            vec![1e6, 1e6],
        )?)),
        "hf_fixed_t" => Ok(make_hf_fixed_t(&SdeModel::ou())),
        "hf_ergodic" => Ok(make_hf_ergodic(&SdeModel::ou())),
        other => Err(Error::Config(format!("unknown estimator id '{other}'"))),
    }
}

/// Default multistart search box for a standard estimator, for the families
/// whose parameter space is not compact.
pub fn standard_search_box(id: &str) -> Option<(Vec<f64>, Vec<f64>)> {
    match id {
        "hf_fixed_t" => Some((vec![0.05], vec![5.0])),
        "hf_ergodic" => Some((vec![-5.0, 0.05], vec![5.0, 5.0])),
        "longitudinal_ou" => Some((vec![0.05], vec![8.0])),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outcome::EstimateOutcome;
    use crate::simulate::{
        simulate_ar, simulate_ou_exact, simulate_ou_panel, StreamRng, DEFAULT_BURN_IN,
    };
    use crate::solver::{find_roots, newton_solve, select_root, SolverConfig};
    use approx::assert_relative_eq;

    fn solve_unique(g: &EstimatingFunction, data: &Dataset, cfg: &SolverConfig) -> Vec<f64> {
        let roots = find_roots(g, data, cfg).unwrap();
        match select_root(&roots, g.space(), None).unwrap() {
            EstimateOutcome::Solved { theta, .. } => theta,
            other => panic!("expected a root, got {other:?}"),
        }
    }

    #[test]
    fn ar1_ls_on_a_pair_has_root_at_the_ratio() {
        let g = make_ar1_ls();
        let data = Dataset::scalar(vec![1.0, 0.5], 0.0).unwrap();
        assert_eq!(g.eval(&[0.0], &data).unwrap(), vec![0.5]);
        let theta = solve_unique(&g, &data, &SolverConfig::default());
        assert_relative_eq!(theta[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn ar1_ls_matches_closed_form_on_simulated_data() {
        let mut rng = StreamRng::new(11, 0);
        let data = simulate_ar(&[0.5], 1.0, 3000, DEFAULT_BURN_IN, &mut rng).unwrap();
        let x = data.scalar_values().unwrap();
        let closed = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>()
            / x[..x.len() - 1].iter().map(|v| v * v).sum::<f64>();
        let g = make_ar1_ls();
        let theta = solve_unique(&g, &data, &SolverConfig::default());
        assert_relative_eq!(theta[0], closed, epsilon = 1e-10);
    }

    #[test]
    fn ar1_ls_constant_path_has_root_one() {
        let g = make_ar1_ls();
        let data = Dataset::scalar(vec![0.7; 30], 0.0).unwrap();
        let theta = solve_unique(&g, &data, &SolverConfig::default());
        assert_relative_eq!(theta[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ar1_ls_large_sample_is_near_the_truth() {
        let mut rng = StreamRng::new(97, 0);
        let data = simulate_ar(&[0.5], 1.0, 100_000, DEFAULT_BURN_IN, &mut rng).unwrap();
        let theta = solve_unique(&make_ar1_ls(), &data, &SolverConfig::default());
        assert!((theta[0] - 0.5).abs() < 0.01, "root {}", theta[0]);
    }

    #[test]
    fn ar1_ls_flags_degenerate_data() {
        let g = make_ar1_ls();
        let zeros = Dataset::scalar(vec![0.0; 50], 0.0).unwrap();
        assert!(matches!(g.eval(&[0.3], &zeros), Err(Error::Domain(_))));
        let out = newton_solve(&g, &zeros, &[0.3], &SolverConfig::default()).unwrap();
        assert!(!out.is_solved());
    }

    #[test]
    fn euler_ls_root_matches_closed_form() {
        let delta = 0.5;
        let mut rng = StreamRng::new(17, 2);
        let data = simulate_ou_exact(1.0, 1.0, 0.3, 5000, delta, &mut rng).unwrap();
        let x = data.scalar_values().unwrap();
        let rho = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>()
            / x[..x.len() - 1].iter().map(|v| v * v).sum::<f64>();
        let closed = (1.0 - rho) / delta;
        let g = make_ou_euler_ls(delta).unwrap();
        let theta = solve_unique(&g, &data, &SolverConfig::default());
        assert_relative_eq!(theta[0], closed, epsilon = 1e-10);
        // Pseudo-true value for exact observations at this spacing.
        let target = (1.0 - (-1.0f64 * delta).exp()) / delta;
        assert!((theta[0] - target).abs() < 0.05, "root {} vs {target}", theta[0]);
    }

    #[test]
    fn euler_ls_eval_is_pinned_on_a_pair() {
        let g = make_ou_euler_ls(0.5).unwrap();
        let data = Dataset::scalar(vec![1.0, 0.5], 0.5).unwrap();
        // G(theta) = 1 * (0.5 - (1 - 0.5 theta) * 1), one increment.
        assert_relative_eq!(g.eval(&[0.0], &data).unwrap()[0], -0.5, epsilon = 1e-15);
        let theta = solve_unique(&g, &data, &SolverConfig::default());
        assert_relative_eq!(theta[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn euler_ls_constant_path_has_root_zero() {
        let g = make_ou_euler_ls(0.25).unwrap();
        let data = Dataset::scalar(vec![1.3; 40], 0.25).unwrap();
        let theta = solve_unique(&g, &data, &SolverConfig::default());
        assert_relative_eq!(theta[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn euler_ls_rejects_bad_step() {
        assert!(make_ou_euler_ls(0.0).is_err());
        assert!(make_ou_euler_ls(-0.5).is_err());
        let g = make_ou_euler_ls(0.5).unwrap();
        let mismatched = Dataset::scalar(vec![1.0, 0.5, 0.2], 0.1).unwrap();
        assert!(matches!(g.eval(&[0.3], &mismatched), Err(Error::Shape(_))));
    }

    #[test]
    fn moment_mean_solves_to_the_sample_mean() {
        let kernel = MomentKernel::mean(ParameterSpace::boxed(vec![-10.0], vec![10.0]).unwrap());
        let g = make_ergodic_moment(&kernel).unwrap();
        let data = Dataset::scalar(vec![1.0, 2.0, 3.0], 0.0).unwrap();
        let theta = solve_unique(&g, &data, &SolverConfig::default());
        assert_relative_eq!(theta[0], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn lag_two_product_kernel() {
        let kernel = MomentKernel {
            dim: 1,
            lag: 2,
            space: ParameterSpace::boxed(vec![-10.0], vec![10.0]).unwrap(),
            g: Arc::new(|w, t| vec![w[0] * w[1] - t[0]]),
            dg: Some(Arc::new(|_, _| DMatrix::from_element(1, 1, -1.0))),
        };
        let g = make_ergodic_moment(&kernel).unwrap();
        let data = Dataset::scalar(vec![1.0, 1.0, 1.0], 0.0).unwrap();
        let theta = solve_unique(&g, &data, &SolverConfig::default());
        assert_relative_eq!(theta[0], 1.0, epsilon = 1e-10);
        let short = Dataset::scalar(vec![1.0], 0.0).unwrap();
        assert!(matches!(g.eval(&[0.0], &short), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_var_recovers_standard_normal_moments() {
        let kernel =
            MomentKernel::mean_var(ParameterSpace::boxed(vec![-10.0, 1e-6], vec![10.0, 10.0]).unwrap());
        let g = make_ergodic_moment(&kernel).unwrap();
        let mut rng = StreamRng::new(23, 0);
        let draws: Vec<f64> = (0..100_000).map(|_| rng.standard_normal()).collect();
        let data = Dataset::scalar(draws, 0.0).unwrap();
        let theta = solve_unique(&g, &data, &SolverConfig::default());
        assert!(theta[0].abs() < 0.02, "mean {}", theta[0]);
        assert!((theta[1] - 1.0).abs() < 0.02, "variance {}", theta[1]);
    }

    #[test]
    fn longitudinal_single_subject_recovers_decay() {
        let (theta_true, delta) = (0.8, 0.5);
        let kernel = MartingaleKernel::ou_linear(delta, 1).unwrap();
        let g = make_longitudinal(&kernel).unwrap();
        let y1 = (-theta_true * delta as f64).exp();
        let data = Dataset::longitudinal(vec![vec![1.0, y1]], delta).unwrap();
        let cfg = SolverConfig {
            search_box: Some((vec![0.05], vec![8.0])),
            ..SolverConfig::default()
        };
        let theta = solve_unique(&g, &data, &cfg);
        assert_relative_eq!(theta[0], theta_true, epsilon = 1e-9);
    }

    #[test]
    fn longitudinal_kernel_has_conditional_mean_zero() {
        // Transition draws at five states: the kernel must average to zero
        // within Monte Carlo error at the true parameter.
        let (theta, sigma, delta) = (1.0, 1.0, 0.5);
        let kernel = MartingaleKernel::ou_linear(delta, 1).unwrap();
        let rho = (-theta * delta as f64).exp();
        let trans_sd = sigma * ((1.0 - rho * rho) / (2.0 * theta)).sqrt();
        let mut rng = StreamRng::new(31, 0);
        for (k, x) in [-1.5, -0.4, 0.0, 0.7, 2.0].iter().enumerate() {
            let reps = 10_000;
            let vals: Vec<f64> = (0..reps)
                .map(|_| {
                    let y = rho * x + trans_sd * rng.standard_normal();
                    (kernel.h)(*x, y, &[theta])[0]
                })
                .collect();
            let (mean, sd) = crate::stats::mean_sd(&vals).unwrap();
            let se = sd / (reps as f64).sqrt();
            assert!(
                mean.abs() <= 3.0 * se + 1e-12,
                "state {k}: kernel mean {mean} exceeds 3 se {se}"
            );
        }
    }

    #[test]
    fn longitudinal_identical_subjects_average_to_one_subject() {
        let kernel = MartingaleKernel::ou_linear(0.5, 1).unwrap();
        let g = make_longitudinal(&kernel).unwrap();
        let cfg = SolverConfig {
            search_box: Some((vec![0.05], vec![8.0])),
            ..SolverConfig::default()
        };
        let pair = vec![1.0, (-0.8f64 * 0.5).exp()];
        let one = Dataset::longitudinal(vec![pair.clone()], 0.5).unwrap();
        let many = Dataset::longitudinal(vec![pair; 7], 0.5).unwrap();
        let a = solve_unique(&g, &one, &cfg);
        let b = solve_unique(&g, &many, &cfg);
        assert_relative_eq!(a[0], b[0], epsilon = 1e-10);
    }

    #[test]
    fn longitudinal_checks_panel_shape() {
        let kernel = MartingaleKernel::ou_linear(0.5, 2).unwrap();
        let g = make_longitudinal(&kernel).unwrap();
        let wrong = Dataset::longitudinal(vec![vec![0.0, 1.0]], 0.5).unwrap();
        assert!(matches!(g.eval(&[1.0], &wrong), Err(Error::Shape(_))));
        let scalar = Dataset::scalar(vec![0.0, 1.0], 0.5).unwrap();
        assert!(g.eval(&[1.0], &scalar).is_err());
    }

    #[test]
    fn fixed_span_estimator_matches_frozen_values() {
        let g = make_hf_fixed_t(&SdeModel::ou());
        let data = Dataset::scalar(vec![0.0, 0.1, -0.05, 0.2], 0.25).unwrap();
        // Realized variance 0.095 over span 0.75 with c = beta^2:
        // G(1) = 2 (0.095 - 0.75) = -1.31, root sqrt(0.095 / 0.75).
        assert_relative_eq!(g.eval(&[1.0], &data).unwrap()[0], -1.31, epsilon = 1e-12);
        let cfg = SolverConfig {
            search_box: standard_search_box("hf_fixed_t"),
            ..SolverConfig::default()
        };
        let theta = solve_unique(&g, &data, &cfg);
        assert_relative_eq!(theta[0], (0.095f64 / 0.75).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn fixed_span_estimator_is_exact_and_monotone() {
        let g = make_hf_fixed_t(&SdeModel::ou());
        // Increments engineered so every squared increment equals
        // delta * beta_star^2: zero residuals at beta_star.
        let (delta, beta_star) = (0.25, 0.8f64);
        let step = (delta * beta_star * beta_star).sqrt();
        let mut vals = vec![0.0];
        for i in 0..6 {
            vals.push(vals[i] + if i % 2 == 0 { step } else { -step });
        }
        let data = Dataset::scalar(vals, delta).unwrap();
        assert_relative_eq!(g.eval(&[beta_star], &data).unwrap()[0], 0.0, epsilon = 1e-12);
        // Positive below the root, negative above: monotone for c = beta^2.
        assert!(g.eval(&[0.5], &data).unwrap()[0] > 0.0);
        assert!(g.eval(&[1.2], &data).unwrap()[0] < 0.0);
        // A constant path has zero increments, so G stays strictly negative
        // and no root exists anywhere in (0, inf).
        let flat = Dataset::scalar(vec![0.7; 80], 0.0125).unwrap();
        for beta in [0.2, 1.0, 4.0] {
            assert!(g.eval(&[beta], &flat).unwrap()[0] < 0.0);
        }
    }

    #[test]
    fn ergodic_component_two_is_fixed_span_over_time() {
        let g2 = make_hf_ergodic(&SdeModel::ou());
        let g1 = make_hf_fixed_t(&SdeModel::ou());
        let mut rng = StreamRng::new(7, 1);
        let data = simulate_ou_exact(1.0, 1.0, 0.2, 500, 0.02, &mut rng).unwrap();
        let tn = data.time_span();
        for theta in [[0.7, 0.9], [1.3, 1.1]] {
            let both = g2.eval(&theta, &data).unwrap();
            let fixed = g1.eval(&theta[1..], &data).unwrap();
            assert_relative_eq!(both[1], fixed[0] / tn, epsilon = 1e-12);
        }
    }

    #[test]
    fn ergodic_drift_component_vanishes_at_zero_on_flat_data() {
        // Zero increments and a = -alpha x: at alpha = 0 the drift residual
        // is identically zero, so the first component evaluates to 0.
        let g = make_hf_ergodic(&SdeModel::ou());
        let data = Dataset::scalar(vec![0.4; 30], 0.1).unwrap();
        for beta in [0.5, 1.0, 2.0] {
            assert_relative_eq!(g.eval(&[0.0, beta], &data).unwrap()[0], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn ergodic_drift_root_matches_closed_form() {
        let g = make_hf_ergodic(&SdeModel::ou());
        let mut rng = StreamRng::new(41, 5);
        let delta = 0.01;
        let data = simulate_ou_exact(1.0, 1.0, 0.1, 20_000, delta, &mut rng).unwrap();
        let x = data.scalar_values().unwrap();
        let num: f64 = x.windows(2).map(|w| w[0] * (w[1] - w[0])).sum();
        let den: f64 = x[..x.len() - 1].iter().map(|v| v * v).sum();
        let alpha_closed = -num / (delta * den);
        let rv: f64 = x.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
        let beta_closed = (rv / data.time_span()).sqrt();
        let cfg = SolverConfig {
            search_box: Some((vec![-5.0, 0.05], vec![5.0, 5.0])),
            ..SolverConfig::default()
        };
        // Both components vanish as beta grows, so a start can wander into
        // the far tail and satisfy the residual tolerance there.  Selecting
        // the root nearest a focus point discards such artifacts.
        let roots = find_roots(&g, &data, &cfg).unwrap();
        let theta = match select_root(&roots, g.space(), Some(&[1.0, 1.0])).unwrap() {
            EstimateOutcome::Solved { theta, .. } => theta,
            other => panic!("expected a root, got {other:?}"),
        };
        assert_relative_eq!(theta[0], alpha_closed, epsilon = 1e-8);
        assert_relative_eq!(theta[1], beta_closed, epsilon = 1e-8);
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let cases: Vec<(EstimatingFunction, Dataset, Vec<Vec<f64>>)> = {
            let mut rng = StreamRng::new(53, 0);
            let ar = simulate_ar(&[0.5], 1.0, 400, 100, &mut rng).unwrap();
            let ou = simulate_ou_exact(1.0, 1.0, 0.2, 400, 0.1, &mut rng).unwrap();
            let panel = simulate_ou_panel(1.0, 1.0, 0.5, 60, 3, &mut rng).unwrap();
            vec![
                (make_ar1_ls(), ar.clone(), vec![vec![0.2], vec![-0.6], vec![0.9]]),
                (
                    make_ou_euler_ls(0.1).unwrap(),
                    ou.clone(),
                    vec![vec![0.5], vec![1.5], vec![-1.0]],
                ),
                (
                    make_ergodic_moment(&MomentKernel::mean_var(
                        ParameterSpace::boxed(vec![-10.0, 1e-6], vec![10.0, 10.0]).unwrap(),
                    ))
                    .unwrap(),
                    ar.clone(),
                    vec![vec![0.1, 1.2], vec![-0.5, 0.7]],
                ),
                (
                    make_longitudinal(&MartingaleKernel::ou_linear(0.5, 3).unwrap()).unwrap(),
                    panel,
                    vec![vec![0.6], vec![1.4], vec![2.5]],
                ),
                (
                    make_hf_fixed_t(&SdeModel::ou()),
                    ou.clone(),
                    vec![vec![0.5], vec![1.0], vec![2.2]],
                ),
                (
                    make_hf_ergodic(&SdeModel::ou()),
                    ou,
                    vec![vec![0.8, 0.9], vec![1.5, 1.3], vec![-0.4, 0.6]],
                ),
            ]
        };
        for (i, (g, data, thetas)) in cases.iter().enumerate() {
            assert!(g.has_analytic_jacobian(), "family {i}");
            for theta in thetas {
                let dev = g.jacobian_check(theta, data).unwrap();
                assert!(dev < 1e-5, "family {i} at {theta:?}: deviation {dev}");
            }
        }
    }

    #[test]
    fn summands_total_to_the_evaluation() {
        let mut rng = StreamRng::new(61, 0);
        let ar = simulate_ar(&[0.5], 1.0, 300, 100, &mut rng).unwrap();
        let ou = simulate_ou_exact(1.0, 1.0, 0.2, 300, 0.1, &mut rng).unwrap();
        let panel = simulate_ou_panel(1.0, 1.0, 0.5, 40, 2, &mut rng).unwrap();
        let cases: Vec<(EstimatingFunction, Dataset, Vec<f64>)> = vec![
            (make_ar1_ls(), ar.clone(), vec![0.4]),
            (make_ou_euler_ls(0.1).unwrap(), ou.clone(), vec![0.8]),
            (
                make_ergodic_moment(&MomentKernel::mean(
                    ParameterSpace::boxed(vec![-10.0], vec![10.0]).unwrap(),
                ))
                .unwrap(),
                ar,
                vec![0.3],
            ),
            (
                make_longitudinal(&MartingaleKernel::ou_linear(0.5, 2).unwrap()).unwrap(),
                panel,
                vec![1.2],
            ),
            (make_hf_fixed_t(&SdeModel::ou()), ou.clone(), vec![1.1]),
            (make_hf_ergodic(&SdeModel::ou()), ou, vec![0.9, 1.1]),
        ];
        for (i, (g, data, theta)) in cases.iter().enumerate() {
            let total = g.eval(theta, data).unwrap();
            let summands = g.summands(theta, data).unwrap();
            let mut acc = vec![0.0; g.dim()];
            for s in &summands {
                for (a, v) in acc.iter_mut().zip(s) {
                    *a += v;
                }
            }
            for (j, (a, t)) in acc.iter().zip(&total).enumerate() {
                assert_relative_eq!(a, t, epsilon = 1e-12, max_relative = 1e-10);
                let _ = j;
            }
            let _ = i;
        }
    }

    #[test]
    fn catalog_lookup_by_id() {
        assert!(standard("ar1_ls", None).is_ok());
        assert!(standard("ou_euler_ls", Some(0.5)).is_ok());
        assert!(matches!(
            standard("ou_euler_ls", None),
            Err(Error::Config(_))
        ));
        assert!(standard("moment_mean", None).is_ok());
        assert!(standard("moment_meanvar", None).is_ok());
        assert!(standard("hf_fixed_t", None).is_ok());
        assert!(standard("hf_ergodic", None).is_ok());
        assert!(matches!(standard("nope", None), Err(Error::Config(_))));
        assert!(standard_search_box("hf_ergodic").is_some());
        assert!(standard_search_box("ar1_ls").is_none());
    }
}

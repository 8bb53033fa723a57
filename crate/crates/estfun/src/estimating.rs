//! The estimating-function abstraction.
//!
//! An estimating function `G_n` maps a parameter and a dataset to a vector of
//! the same dimension as the parameter; estimates are roots of
//! `G_n(theta) = 0`.  Implementations expose the summand decomposition
//! `G_n = sum_i s_i` so covariance estimators can form outer products, and
//! optionally an analytic Jacobian (a finite-difference fallback is built in).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::params::ParameterSpace;
use crate::scaling::ScalingMatrix;

pub type EvalFn = Arc<dyn Fn(&[f64], &Dataset) -> Result<Vec<f64>> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&[f64], &Dataset) -> Result<DMatrix<f64>> + Send + Sync>;
pub type SummandsFn = Arc<dyn Fn(&[f64], &Dataset) -> Result<Vec<Vec<f64>>> + Send + Sync>;

/// Largest acceptable condition number for a reweighting matrix.
pub const MAX_REWEIGHT_CONDITION: f64 = 1e12;

#[derive(Clone)]
pub struct EstimatingFunction {
    dim: usize,
    lag: usize,
    space: ParameterSpace,
    scaling: ScalingMatrix,
    eval: EvalFn,
    jacobian: Option<JacobianFn>,
    summands: SummandsFn,
}

impl std::fmt::Debug for EstimatingFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EstimatingFunction")
            .field("dim", &self.dim)
            .field("lag", &self.lag)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl EstimatingFunction {
    /// Builds an estimating function from its summand decomposition and a
    /// whole-sample evaluator (which should agree with the summand total).
    pub fn new(
        dim: usize,
        lag: usize,
        space: ParameterSpace,
        scaling: ScalingMatrix,
        eval: EvalFn,
        summands: SummandsFn,
    ) -> Result<Self> {
        if space.dim() != dim {
            return Err(Error::Shape(format!(
                "parameter space has dimension {}, estimating function has {dim}",
                space.dim()
            )));
        }
        if lag == 0 {
            return Err(Error::Shape("lag must be at least 1".into()));
        }
        Ok(EstimatingFunction {
            dim,
            lag,
            space,
            scaling,
            eval,
            jacobian: None,
            summands,
        })
    }

    pub fn with_jacobian(mut self, jacobian: JacobianFn) -> Self {
        self.jacobian = Some(jacobian);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Window length of each summand (1 for plain moments, 2 for transition
    /// pairs).
    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn space(&self) -> &ParameterSpace {
        &self.space
    }

    pub fn scaling(&self) -> &ScalingMatrix {
        &self.scaling
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn eval(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        if theta.len() != self.dim {
            return Err(Error::Shape(format!(
                "parameter has length {}, expected {}",
                theta.len(),
                self.dim
            )));
        }
        if !self.space.contains(theta) {
            return Err(Error::Domain(format!(
                "parameter {theta:?} lies outside the parameter space"
            )));
        }
        let out = (self.eval)(theta, data)?;
        if out.len() != self.dim {
            return Err(Error::Shape(format!(
                "estimating function returned length {}, expected {}",
                out.len(),
                self.dim
            )));
        }
        Ok(out)
    }

    /// Analytic Jacobian when available, otherwise central finite
    /// differences.
    pub fn jacobian(&self, theta: &[f64], data: &Dataset) -> Result<DMatrix<f64>> {
        match &self.jacobian {
            Some(j) => j(theta, data),
            None => self.fd_jacobian(theta, data),
        }
    }

    /// Finite-difference Jacobian with per-coordinate step
    /// `eps^(1/3) * max(1, |theta_j|)`: central differences in the interior,
    /// one-sided at boundary points where a probe would leave the space.
    pub fn fd_jacobian(&self, theta: &[f64], data: &Dataset) -> Result<DMatrix<f64>> {
        let p = self.dim;
        let base = f64::EPSILON.cbrt();
        let mut jac = DMatrix::zeros(p, p);
        let mut point = theta.to_vec();
        let mut center: Option<Vec<f64>> = None;
        for j in 0..p {
            let h = base * theta[j].abs().max(1.0);
            point[j] = theta[j] + h;
            let up = self
                .space
                .contains(&point)
                .then(|| self.eval(&point, data))
                .transpose()?;
            point[j] = theta[j] - h;
            let down = self
                .space
                .contains(&point)
                .then(|| self.eval(&point, data))
                .transpose()?;
            point[j] = theta[j];
            let col: Vec<f64> = match (up, down) {
                (Some(u), Some(d)) => {
                    u.iter().zip(&d).map(|(a, b)| (a - b) / (2.0 * h)).collect()
                }
                (Some(u), None) => {
                    if center.is_none() {
                        center = Some(self.eval(theta, data)?);
                    }
                    let c = center.as_ref().expect("just filled");
                    u.iter().zip(c).map(|(a, b)| (a - b) / h).collect()
                }
                (None, Some(d)) => {
                    if center.is_none() {
                        center = Some(self.eval(theta, data)?);
                    }
                    let c = center.as_ref().expect("just filled");
                    c.iter().zip(&d).map(|(a, b)| (a - b) / h).collect()
                }
                (None, None) => {
                    return Err(Error::Domain(format!(
                        "cannot difference at {theta:?}: probes on both sides of coordinate {j} leave the space"
                    )))
                }
            };
            for i in 0..p {
                jac[(i, j)] = col[i];
            }
        }
        Ok(jac)
    }

    /// Largest relative deviation between the analytic and finite-difference
    /// Jacobians at `theta`.
    pub fn jacobian_check(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        let analytic = self.jacobian(theta, data)?;
        let fd = self.fd_jacobian(theta, data)?;
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let scale = analytic[(i, j)].abs().max(fd[(i, j)].abs()).max(1.0);
                worst = worst.max((analytic[(i, j)] - fd[(i, j)]).abs() / scale);
            }
        }
        Ok(worst)
    }

    /// Summands `s_i` with `G_n(theta) = sum_i s_i(theta)`, in data order.
    pub fn summands(&self, theta: &[f64], data: &Dataset) -> Result<Vec<Vec<f64>>> {
        (self.summands)(theta, data)
    }
}

/// Left-multiplies an estimating function by a constant invertible matrix.
/// The root set is unchanged; so is every sandwich-type quantity, since the
/// matrix cancels analytically.
pub fn reweight(g: &EstimatingFunction, b: &DMatrix<f64>) -> Result<EstimatingFunction> {
    let p = g.dim();
    if b.nrows() != p || b.ncols() != p {
        return Err(Error::Shape(format!(
            "reweighting matrix is {}x{}, expected {p}x{p}",
            b.nrows(),
            b.ncols()
        )));
    }
    let svd = b.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax / smin >= MAX_REWEIGHT_CONDITION {
        return Err(Error::Singular(format!(
            "reweighting matrix has condition number {:.3e}, limit is {MAX_REWEIGHT_CONDITION:.1e}",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }

    let apply = {
        let b = b.clone();
        move |v: Vec<f64>| -> Vec<f64> {
            let out = &b * DVector::from_vec(v);
            out.iter().copied().collect()
        }
    };

    let eval = {
        let inner = g.eval.clone();
        let apply = apply.clone();
        Arc::new(move |theta: &[f64], data: &Dataset| -> Result<Vec<f64>> {
            Ok(apply(inner(theta, data)?))
        }) as EvalFn
    };
    let summands = {
        let inner = g.summands.clone();
        let apply = apply.clone();
        Arc::new(move |theta: &[f64], data: &Dataset| -> Result<Vec<Vec<f64>>> {
            Ok(inner(theta, data)?.into_iter().map(&apply).collect())
        }) as SummandsFn
    };
    let jacobian = g.jacobian.as_ref().map(|inner| {
        let inner = inner.clone();
        let b = b.clone();
        Arc::new(move |theta: &[f64], data: &Dataset| -> Result<DMatrix<f64>> {
            Ok(&b * inner(theta, data)?)
        }) as JacobianFn
    });

    Ok(EstimatingFunction {
        dim: p,
        lag: g.lag,
        space: g.space.clone(),
        scaling: g.scaling,
        eval,
        jacobian,
        summands,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dummy_data() -> Dataset {
        Dataset::scalar(vec![0.0, 0.0], 0.0).unwrap()
    }

    /// g(theta) = (theta_1 - 1, theta_2^2 - 4), ignoring the data.
    fn toy_function() -> EstimatingFunction {
        let eval: EvalFn =
            Arc::new(|t: &[f64], _: &Dataset| Ok(vec![t[0] - 1.0, t[1] * t[1] - 4.0]));
        let summands: SummandsFn =
            Arc::new(|t: &[f64], _: &Dataset| Ok(vec![vec![t[0] - 1.0, t[1] * t[1] - 4.0]]));
        EstimatingFunction::new(
            2,
            1,
            ParameterSpace::reals(2),
            ScalingMatrix::SqrtN { dim: 2 },
            eval,
            summands,
        )
        .unwrap()
        .with_jacobian(Arc::new(|t: &[f64], _: &Dataset| {
            Ok(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0 * t[1]]))
        }))
    }

    #[test]
    fn reweight_swaps_components() {
        let g = toy_function();
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let swapped = reweight(&g, &b).unwrap();
        let out = swapped.eval(&[3.0, 3.0], &dummy_data()).unwrap();
        assert_eq!(out, vec![5.0, 2.0]);
        let orig = g.eval(&[3.0, 3.0], &dummy_data()).unwrap();
        assert_eq!(orig, vec![2.0, 5.0]);
    }

    #[test]
    fn reweight_rejects_near_singular_matrices() {
        let g = toy_function();
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(reweight(&g, &singular), Err(Error::Singular(_))));
        let ill = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-13]);
        assert!(reweight(&g, &ill).is_err());
        let fine = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-3]);
        assert!(reweight(&g, &fine).is_ok());
    }

    #[test]
    fn reweight_transforms_jacobian_and_summands() {
        let g = toy_function();
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let w = reweight(&g, &b).unwrap();
        let theta = [3.0, 3.0];
        let jac = w.jacobian(&theta, &dummy_data()).unwrap();
        let expect = &b * g.jacobian(&theta, &dummy_data()).unwrap();
        assert_relative_eq!(jac[(0, 1)], expect[(0, 1)]);
        let s = w.summands(&theta, &dummy_data()).unwrap();
        assert_eq!(s.len(), 1);
        assert_relative_eq!(s[0][0], 2.0 * 2.0 + 5.0);
    }

    #[test]
    fn fd_jacobian_matches_analytic() {
        let g = toy_function();
        let dev = g.jacobian_check(&[0.3, -1.7], &dummy_data()).unwrap();
        assert!(dev < 1e-9, "deviation {dev}");
    }

    #[test]
    fn eval_validates_shapes_and_domain() {
        let g = toy_function();
        assert!(matches!(
            g.eval(&[1.0], &dummy_data()),
            Err(Error::Shape(_))
        ));
        let eval: EvalFn = Arc::new(|_: &[f64], _: &Dataset| Ok(vec![0.0]));
        let summands: SummandsFn = Arc::new(|_: &[f64], _: &Dataset| Ok(vec![vec![0.0]]));
        let bad = EstimatingFunction::new(
            2,
            1,
            ParameterSpace::reals(2),
            ScalingMatrix::SqrtN { dim: 2 },
            eval,
            summands,
        )
        .unwrap();
        assert!(matches!(
            bad.eval(&[0.0, 0.0], &dummy_data()),
            Err(Error::Shape(_))
        ));

        let positive: EvalFn = Arc::new(|t: &[f64], _: &Dataset| Ok(vec![t[0].ln()]));
        let psumm: SummandsFn = Arc::new(|t: &[f64], _: &Dataset| Ok(vec![vec![t[0].ln()]]));
        let half_line = EstimatingFunction::new(
            1,
            1,
            ParameterSpace::positive(1),
            ScalingMatrix::SqrtN { dim: 1 },
            positive,
            psumm,
        )
        .unwrap();
        assert!(matches!(
            half_line.eval(&[-1.0], &dummy_data()),
            Err(Error::Domain(_))
        ));
    }
}

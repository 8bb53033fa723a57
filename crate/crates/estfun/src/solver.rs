//! Root finding for estimating functions.
//!
//! The workhorse is a damped Newton iteration with step halving and strict
//! residual decrease, wrapped in a deterministic multistart over a
//! low-discrepancy grid.  A separate fixed-point iteration with a frozen
//! coefficient matrix is provided for contraction-style arguments and cheap
//! re-solves.  Every failure mode maps to an explicit failure outcome.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimating::EstimatingFunction;
use crate::outcome::{DeltaReason, EstimateOutcome};
use crate::params::{lex_less, ParameterSpace};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Accept a root when the residual norm falls below this.
    pub tol_residual: f64,
    /// Declare a stall when an accepted step is shorter than this.
    pub tol_step: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Number of multistart grid points.
    pub multistart_points: usize,
    /// Roots closer than this in chart coordinates are considered equal.
    pub dedup_radius: f64,
    /// Search box for multistart when the parameter space is not compact.
    pub search_box: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol_residual: 1e-10,
            tol_step: 1e-12,
            max_iter: 100,
            max_halvings: 30,
            multistart_points: 32,
            dedup_radius: 1e-6,
            search_box: None,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton iteration from `start`, which must lie in the parameter
/// space.  Singular Jacobians are retried once with finite differences.
pub fn newton_solve(
    g: &EstimatingFunction,
    data: &Dataset,
    start: &[f64],
    cfg: &SolverConfig,
) -> Result<EstimateOutcome> {
    let p = g.dim();
    if start.len() != p {
        return Err(Error::Shape(format!(
            "start has length {}, expected {p}",
            start.len()
        )));
    }
    if !g.space().contains(start) {
        return Err(Error::Domain(format!(
            "start {start:?} lies outside the parameter space"
        )));
    }

    let mut theta = start.to_vec();
    let mut gval = match g.eval(&theta, data) {
        Ok(v) => v,
        Err(_) => return Ok(EstimateOutcome::delta(DeltaReason::NoRootFound)),
    };
    let mut iterations = 0;

    loop {
        let residual = norm(&gval);
        if residual <= cfg.tol_residual {
            return Ok(EstimateOutcome::Solved {
                theta,
                residual_norm: residual,
                iterations,
            });
        }
        if iterations >= cfg.max_iter {
            return Ok(EstimateOutcome::delta(DeltaReason::MaxIterations));
        }

        let direction = match newton_direction(g, data, &theta, &gval) {
            Some(d) => d,
            None => return Ok(EstimateOutcome::delta(DeltaReason::NoRootFound)),
        };

        let mut accepted: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        let mut any_inside = false;
        let mut lambda = 1.0;
        for _ in 0..=cfg.max_halvings {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&direction)
                .map(|(t, d)| t + lambda * d)
                .collect();
            if g.space().contains(&cand) {
                any_inside = true;
                if let Ok(gc) = g.eval(&cand, data) {
                    if norm(&gc) < residual {
                        let step = lambda * norm(&direction);
                        accepted = Some((cand, gc, step));
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }

        match accepted {
            None if !any_inside => return Ok(EstimateOutcome::delta(DeltaReason::LeftDomain)),
            None => return Ok(EstimateOutcome::delta(DeltaReason::NoRootFound)),
            Some((cand, gc, step)) => {
                theta = cand;
                gval = gc;
                iterations += 1;
                if step < cfg.tol_step * (1.0 + norm(&theta)) && norm(&gval) > cfg.tol_residual {
                    return Ok(EstimateOutcome::delta(DeltaReason::NoRootFound));
                }
            }
        }
    }
}

/// Newton direction `-J^{-1} g`, falling back to a finite-difference
/// Jacobian when the analytic one is unusable.
fn newton_direction(
    g: &EstimatingFunction,
    data: &Dataset,
    theta: &[f64],
    gval: &[f64],
) -> Option<Vec<f64>> {
    let rhs = DVector::from_iterator(gval.len(), gval.iter().map(|x| -x));
    let solve = |jac: DMatrix<f64>| -> Option<Vec<f64>> {
        if jac.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let lu = jac.full_piv_lu();
        let sol = lu.solve(&rhs)?;
        if sol.iter().any(|x| !x.is_finite()) {
            return None;
        }
        Some(sol.iter().copied().collect())
    };
    if let Ok(jac) = g.jacobian(theta, data) {
        if let Some(d) = solve(jac) {
            return Some(d);
        }
    }
    if g.has_analytic_jacobian() {
        if let Ok(jac) = g.fd_jacobian(theta, data) {
            return solve(jac);
        }
    }
    None
}

/// Fixed-point iteration `z <- z - M^{-1} g(z)` with a frozen matrix `M`.
/// Converges linearly when `M` is close enough to the Jacobian near a root;
/// iterates that leave the space or run away are reported as failures.
pub fn contraction_solve(
    g: &EstimatingFunction,
    data: &Dataset,
    start: &[f64],
    frozen: &DMatrix<f64>,
    cfg: &SolverConfig,
) -> Result<EstimateOutcome> {
    let p = g.dim();
    if start.len() != p || frozen.nrows() != p || frozen.ncols() != p {
        return Err(Error::Shape(format!(
            "start length {} and frozen matrix {}x{} must all match dimension {p}",
            start.len(),
            frozen.nrows(),
            frozen.ncols()
        )));
    }
    if !g.space().contains(start) {
        return Err(Error::Domain(format!(
            "start {start:?} lies outside the parameter space"
        )));
    }
    let lu = frozen.clone().full_piv_lu();
    if !lu.is_invertible() {
        return Err(Error::Singular("frozen matrix is singular".into()));
    }

    let guard = match g.space().bounds() {
        Some((lo, hi)) => norm(&hi.iter().zip(lo).map(|(h, l)| h - l).collect::<Vec<_>>()),
        None => 1e6 * (1.0 + norm(start)),
    };

    let mut z = start.to_vec();
    let mut iterations = 0;
    loop {
        let gz = match g.eval(&z, data) {
            Ok(v) => v,
            Err(_) => return Ok(EstimateOutcome::delta(DeltaReason::NoRootFound)),
        };
        let residual = norm(&gz);
        if residual <= cfg.tol_residual {
            return Ok(EstimateOutcome::Solved {
                theta: z,
                residual_norm: residual,
                iterations,
            });
        }
        if iterations >= cfg.max_iter {
            return Ok(EstimateOutcome::delta(DeltaReason::MaxIterations));
        }
        let rhs = DVector::from_column_slice(&gz);
        let update = lu.solve(&rhs).expect("invertibility checked above");
        for (zj, u) in z.iter_mut().zip(update.iter()) {
            *zj -= u;
        }
        iterations += 1;
        if !g.space().contains(&z) {
            return Ok(EstimateOutcome::delta(DeltaReason::LeftDomain));
        }
        let drift: Vec<f64> = z.iter().zip(start).map(|(a, b)| a - b).collect();
        if norm(&drift) > guard {
            return Ok(EstimateOutcome::delta(DeltaReason::NoRootFound));
        }
    }
}

/// One root located by the multistart search.
#[derive(Clone, Debug)]
pub struct Root {
    pub theta: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// All distinct roots found, with attempt accounting.
#[derive(Clone, Debug)]
pub struct RootSet {
    pub roots: Vec<Root>,
    pub attempts: usize,
    pub failures: usize,
}

/// Fractional parts of a generalized golden-ratio sequence: a deterministic
/// low-discrepancy point set in the unit cube.
fn low_discrepancy_points(dim: usize, count: usize) -> Vec<Vec<f64>> {
    // Unique positive root of x^(dim+1) = x + 1.
    let mut phi = 1.5f64;
    for _ in 0..64 {
        let f = phi.powi(dim as i32 + 1) - phi - 1.0;
        let df = (dim as f64 + 1.0) * phi.powi(dim as i32) - 1.0;
        phi -= f / df;
    }
    let alphas: Vec<f64> = (1..=dim).map(|j| phi.powi(-(j as i32)).fract()).collect();
    (0..count)
        .map(|i| {
            alphas
                .iter()
                .map(|a| (0.5 + a * (i + 1) as f64).fract())
                .collect()
        })
        .collect()
}

/// Runs Newton from every point of a low-discrepancy grid over the search
/// box and collects the distinct roots.  The search box is the parameter box
/// itself for compact spaces; open spaces need `cfg.search_box`.
pub fn find_roots(g: &EstimatingFunction, data: &Dataset, cfg: &SolverConfig) -> Result<RootSet> {
    let p = g.dim();
    let (lo, hi): (Vec<f64>, Vec<f64>) = match (g.space().bounds(), &cfg.search_box) {
        (_, Some((lo, hi))) => (lo.clone(), hi.clone()),
        (Some((lo, hi)), None) => (lo.to_vec(), hi.to_vec()),
        (None, None) => {
            return Err(Error::Config(
                "multistart over a non-compact space needs a search box".into(),
            ))
        }
    };
    if lo.len() != p || hi.len() != p || lo.iter().zip(&hi).any(|(l, h)| l >= h) {
        return Err(Error::Config(format!(
            "invalid search box for dimension {p}: {lo:?} .. {hi:?}"
        )));
    }
    if cfg.multistart_points == 0 {
        return Err(Error::Config("multistart needs at least one start".into()));
    }

    let mut roots: Vec<Root> = Vec::new();
    let mut chart: Vec<Vec<f64>> = Vec::new();
    let mut failures = 0;
    for unit in low_discrepancy_points(p, cfg.multistart_points) {
        let start: Vec<f64> = unit
            .iter()
            .zip(lo.iter().zip(&hi))
            .map(|(u, (l, h))| l + u * (h - l))
            .collect();
        if !g.space().contains(&start) {
            failures += 1;
            continue;
        }
        match newton_solve(g, data, &start, cfg)? {
            EstimateOutcome::Solved {
                theta,
                residual_norm,
                iterations,
            } => {
                let pt = g.space().psi(&theta);
                let known = chart
                    .iter()
                    .any(|c| norm(&c.iter().zip(&pt).map(|(a, b)| a - b).collect::<Vec<_>>()) < cfg.dedup_radius);
                if !known {
                    chart.push(pt);
                    roots.push(Root {
                        theta,
                        residual_norm,
                        iterations,
                    });
                }
            }
            EstimateOutcome::Delta { .. } => failures += 1,
        }
    }

    // Deterministic presentation order regardless of which start found what.
    let mut order: Vec<usize> = (0..roots.len()).collect();
    order.sort_by(|&a, &b| {
        if lex_less(&chart[a], &chart[b]) {
            std::cmp::Ordering::Less
        } else if lex_less(&chart[b], &chart[a]) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    let roots = order.into_iter().map(|i| roots[i].clone()).collect();

    Ok(RootSet {
        roots,
        attempts: cfg.multistart_points,
        failures,
    })
}

/// Selects the root nearest to the focus point `rho` in the space's metric;
/// exact ties go to the lexicographically smallest chart point.  An empty
/// root set yields the failure outcome.
pub fn rho_centered_select(
    roots: &RootSet,
    space: &ParameterSpace,
    rho: &[f64],
) -> Result<EstimateOutcome> {
    if !space.contains(rho) {
        return Err(Error::Domain(format!(
            "focus point {rho:?} lies outside the parameter space"
        )));
    }
    let mut best: Option<(f64, Vec<f64>, &Root)> = None;
    for root in &roots.roots {
        let d = space.distance(&root.theta, rho)?;
        let pt = space.psi(&root.theta);
        let better = match &best {
            None => true,
            Some((bd, bpt, _)) => d < *bd || (d == *bd && lex_less(&pt, bpt)),
        };
        if better {
            best = Some((d, pt, root));
        }
    }
    Ok(match best {
        Some((_, _, root)) => EstimateOutcome::Solved {
            theta: root.theta.clone(),
            residual_norm: root.residual_norm,
            iterations: root.iterations,
        },
        None => EstimateOutcome::delta(DeltaReason::NoRootFound),
    })
}

/// Default focus for root selection when the caller supplies none: the
/// center of the parameter bounds, falling back to the search box.
pub fn default_focus(space: &ParameterSpace, cfg: &SolverConfig) -> Result<Vec<f64>> {
    let center =
        |lo: &[f64], hi: &[f64]| -> Vec<f64> { lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect() };
    if let Some((lo, hi)) = space.bounds() {
        return Ok(center(lo, hi));
    }
    if let Some((lo, hi)) = &cfg.search_box {
        return Ok(center(lo, hi));
    }
    Err(Error::Config(
        "cannot derive a focus point: no bounds and no search box".into(),
    ))
}

/// Root selection with an optional focus point: with one, defer to
/// `rho_centered_select`; without, take the lexicographically smallest root.
pub fn select_root(
    roots: &RootSet,
    space: &ParameterSpace,
    rho: Option<&[f64]>,
) -> Result<EstimateOutcome> {
    match rho {
        Some(r) => rho_centered_select(roots, space, r),
        None => Ok(match roots.roots.first() {
            Some(root) => EstimateOutcome::Solved {
                theta: root.theta.clone(),
                residual_norm: root.residual_norm,
                iterations: root.iterations,
            },
            None => EstimateOutcome::delta(DeltaReason::NoRootFound),
        }),
    }
}

//! Replication engine: simulate, solve, studentize, and summarize over many
//! independent streams, with diagnostics for consistency, convergence rates,
//! interval coverage, and normality of studentized statistics.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{sandwich, theta_bar_ar2_misspec, theta_bar_ou, VhatMode};
use crate::catalog::{
    make_ar1_ls, make_ergodic_moment, make_hf_ergodic, make_hf_fixed_t, make_longitudinal,
    make_ou_euler_ls, MartingaleKernel, MomentKernel,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimating::EstimatingFunction;
use crate::outcome::EstimateOutcome;
use crate::params::ParameterSpace;
use crate::scaling::ScalingMatrix;
use crate::simulate::{
    ou_stationary_sd, simulate_ar, simulate_ou_exact, simulate_ou_panel, simulate_sde_euler,
    SdeModel, StreamRng, DEFAULT_BURN_IN, DEFAULT_SUBSTEPS,
};
use crate::solver::{default_focus, find_roots, select_root, SolverConfig};
use crate::stats::{ks_against_normal, mean_sd, slope_log_log};

fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

/// Data-generating process for one replication.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Stationary autoregression driven by Gaussian noise.
    Ar { coeffs: Vec<f64>, noise_sd: f64 },
    /// Mean-reverting diffusion observed through its exact transition law.
    /// Without `start` the path begins at a stationary draw.
    OuExact {
        theta: f64,
        sigma: f64,
        #[serde(default)]
        start: Option<f64>,
    },
    /// Mean-reverting diffusion discretized by substepped Euler updates.
    SdeEuler {
        alpha: f64,
        beta: f64,
        #[serde(default)]
        x0: f64,
        #[serde(default = "default_substeps")]
        substeps: usize,
    },
    /// Independent subjects, each an exact mean-reverting path with `m`
    /// transitions, started from the stationary law.
    OuLongitudinal { theta: f64, sigma: f64, m: usize },
}

impl ModelSpec {
    pub fn simulate(&self, n: usize, delta: f64, rng: &mut StreamRng) -> Result<Dataset> {
        match self {
            ModelSpec::Ar { coeffs, noise_sd } => {
                simulate_ar(coeffs, *noise_sd, n, DEFAULT_BURN_IN, rng)
            }
            ModelSpec::OuExact { theta, sigma, start } => {
                let x0 = match start {
                    Some(x) => *x,
                    None => rng.normal(0.0, ou_stationary_sd(*theta, *sigma)),
                };
                simulate_ou_exact(*theta, *sigma, x0, n, delta, rng)
            }
            ModelSpec::SdeEuler { alpha, beta, x0, substeps } => {
                let model = SdeModel::ou().with_x0(*x0);
                simulate_sde_euler(&model, *alpha, *beta, n, delta, *substeps, rng)
            }
            ModelSpec::OuLongitudinal { theta, sigma, m } => {
                simulate_ou_panel(*theta, *sigma, delta, n, *m, rng)
            }
        }
    }
}

/// Which estimating function to apply.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    Ar1Ls,
    OuEulerLs,
    MomentMean,
    MomentMeanvar,
    LongitudinalOu { m: usize },
    HfFixedT,
    HfErgodic,
}

impl EstimatorSpec {
    pub fn dim(&self) -> usize {
        match self {
            EstimatorSpec::MomentMeanvar | EstimatorSpec::HfErgodic => 2,
            _ => 1,
        }
    }

    /// Instantiates the estimating function for one sampling step.
    pub fn build(&self, delta: f64) -> Result<EstimatingFunction> {
        match self {
            EstimatorSpec::Ar1Ls => Ok(make_ar1_ls()),
            EstimatorSpec::OuEulerLs => make_ou_euler_ls(delta),
            EstimatorSpec::MomentMean => make_ergodic_moment(&MomentKernel::mean(
                ParameterSpace::boxed(vec![-1e6], vec![1e6])?,
            )),
            EstimatorSpec::MomentMeanvar => make_ergodic_moment(&MomentKernel::mean_var(
                ParameterSpace::boxed(vec![-1e6, 1e-9], vec![1e6, 1e6])?,
            )),
            EstimatorSpec::LongitudinalOu { m } => {
                make_longitudinal(&MartingaleKernel::ou_linear(delta, *m)?)
            }
            EstimatorSpec::HfFixedT => Ok(make_hf_fixed_t(&SdeModel::ou())),
            EstimatorSpec::HfErgodic => Ok(make_hf_ergodic(&SdeModel::ou())),
        }
    }

    /// Default multistart region for families without a compact space.
    pub fn default_search_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            EstimatorSpec::LongitudinalOu { .. } => Some((vec![0.05], vec![8.0])),
            EstimatorSpec::HfFixedT => Some((vec![0.05], vec![5.0])),
            EstimatorSpec::HfErgodic => Some((vec![-5.0, 0.05], vec![5.0, 5.0])),
            _ => None,
        }
    }

    /// The parameter the estimator targets under correct specification.
    fn true_theta(&self, model: &ModelSpec) -> Result<Vec<f64>> {
        match (self, model) {
            (EstimatorSpec::Ar1Ls, ModelSpec::Ar { coeffs, .. }) if coeffs.len() == 1 => {
                Ok(vec![coeffs[0]])
            }
            (EstimatorSpec::OuEulerLs, ModelSpec::OuExact { theta, .. }) => Ok(vec![*theta]),
            (EstimatorSpec::LongitudinalOu { .. }, ModelSpec::OuLongitudinal { theta, .. }) => {
                Ok(vec![*theta])
            }
            (EstimatorSpec::HfFixedT, ModelSpec::SdeEuler { beta, .. }) => Ok(vec![*beta]),
            (EstimatorSpec::HfFixedT, ModelSpec::OuExact { sigma, .. }) => Ok(vec![*sigma]),
            (EstimatorSpec::HfErgodic, ModelSpec::OuExact { theta, sigma, .. }) => {
                Ok(vec![*theta, *sigma])
            }
            (EstimatorSpec::HfErgodic, ModelSpec::SdeEuler { alpha, beta, .. }) => {
                Ok(vec![*alpha, *beta])
            }
            _ => Err(Error::Config(
                "no default target for this model/estimator pair; supply the limit explicitly"
                    .into(),
            )),
        }
    }
}

/// Where the reference value for coverage and residual scaling comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LimitSource {
    /// Correct specification: the simulated parameter itself.
    TrueTheta,
    /// First-order fit to second-order data: the lag-one autocorrelation.
    Ar2Pseudo,
    /// Euler fit to exact transitions: `(1 - exp(-theta0 delta)) / delta`.
    OuEulerPseudo,
    /// Two-parameter ergodic design; the target is the simulated parameter,
    /// with limit variances available from quadrature.
    ErgodicQuadrature,
    /// Caller-supplied target.
    Explicit { theta_bar: Vec<f64> },
}

impl LimitSource {
    /// The target value for one sampling step.
    pub fn resolve(
        &self,
        model: &ModelSpec,
        estimator: &EstimatorSpec,
        delta: f64,
    ) -> Result<Vec<f64>> {
        match self {
            LimitSource::TrueTheta | LimitSource::ErgodicQuadrature => {
                estimator.true_theta(model)
            }
            LimitSource::Ar2Pseudo => match model {
                ModelSpec::Ar { coeffs, .. } if coeffs.len() == 2 => {
                    Ok(vec![theta_bar_ar2_misspec(coeffs[0], coeffs[1])?])
                }
                _ => Err(Error::Config(
                    "the autoregression pseudo-true formula needs a two-coefficient model".into(),
                )),
            },
            LimitSource::OuEulerPseudo => match model {
                ModelSpec::OuExact { theta, .. } => Ok(vec![theta_bar_ou(*theta, delta)?]),
                _ => Err(Error::Config(
                    "the Euler pseudo-true formula needs exact mean-reverting data".into(),
                )),
            },
            LimitSource::Explicit { theta_bar } => {
                if theta_bar.len() != estimator.dim() {
                    return Err(Error::Shape(format!(
                        "explicit target has length {}, estimator has {} parameters",
                        theta_bar.len(),
                        estimator.dim()
                    )));
                }
                Ok(theta_bar.clone())
            }
        }
    }
}

/// A full replication study: one model, one estimator, several sample sizes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Experiment {
    pub model: ModelSpec,
    pub estimator: EstimatorSpec,
    /// `(n, delta)` pairs, strictly increasing in `n`.
    pub sizes: Vec<(usize, f64)>,
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Focus point for root selection; defaults to the center of the search
    /// region.
    #[serde(default)]
    pub rho: Option<Vec<f64>>,
    pub limit: LimitSource,
    pub level: f64,
}

impl Experiment {
    fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::Config(format!(
                "need at least 2 replications, got {}",
                self.replications
            )));
        }
        if self.sizes.is_empty() {
            return Err(Error::Config("need at least one sample size".into()));
        }
        for pair in self.sizes.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::Config(format!(
                    "sample sizes must increase strictly, got {} then {}",
                    pair[0].0, pair[1].0
                )));
            }
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "confidence level must lie in (0, 1), got {}",
                self.level
            )));
        }
        Ok(())
    }

    fn effective_solver(&self) -> SolverConfig {
        let mut cfg = self.solver.clone();
        if cfg.search_box.is_none() {
            cfg.search_box = self.estimator.default_search_box();
        }
        cfg
    }

    /// The focus point used for root selection: the configured one, or the
    /// center of the parameter bounds or search region.
    fn focus(&self, g: &EstimatingFunction, cfg: &SolverConfig) -> Result<Vec<f64>> {
        match &self.rho {
            Some(rho) => Ok(rho.clone()),
            None => default_focus(g.space(), cfg),
        }
    }
}

/// One replication's outcome.
#[derive(Clone, Debug, Serialize)]
pub struct RepRecord {
    pub rep: u64,
    pub n: usize,
    pub delta: f64,
    pub outcome: EstimateOutcome,
    /// Distinct roots the multistart search found.
    pub roots_found: usize,
    pub studentized: Option<Vec<f64>>,
    pub ci_hit: Option<Vec<bool>>,
}

/// Aggregates for one `(n, delta)` pair.
#[derive(Clone, Debug, Serialize)]
pub struct SizeSummary {
    pub n: usize,
    pub delta: f64,
    pub theta_bar: Vec<f64>,
    /// Diagonal of the scaling matrix at this size.
    pub scale: Vec<f64>,
    pub replications: usize,
    pub solved: usize,
    pub delta_count: usize,
    /// Mean of the solved estimates, per coordinate.
    pub mean: Option<Vec<f64>>,
    /// Standard deviation of the solved estimates, per coordinate.
    pub sd: Option<Vec<f64>>,
    /// Standard deviation of the scaled residuals `a_n (theta_hat - target)`.
    pub scaled_sd: Option<Vec<f64>>,
    /// Fraction of solved replications whose interval contains the target.
    pub coverage: Option<Vec<f64>>,
    /// Kolmogorov-Smirnov distance of the studentized values from standard
    /// normal, per coordinate.
    pub ks: Option<Vec<f64>>,
    pub records: Vec<RepRecord>,
}

/// Study-level output.
#[derive(Clone, Debug, Serialize)]
pub struct McSummary {
    pub level: f64,
    /// Set when more than 20% of replications failed at any size.
    pub unreliable: bool,
    pub sizes: Vec<SizeSummary>,
}

fn scale_diag(scaling: &ScalingMatrix, n: usize, delta: f64) -> Vec<f64> {
    match scaling {
        ScalingMatrix::SqrtN { dim } => vec![(n as f64).sqrt(); *dim],
        ScalingMatrix::SqrtSpanSqrtN => vec![(n as f64 * delta).sqrt(), (n as f64).sqrt()],
    }
}

/// Runs the full study: for every size, `replications` independent streams,
/// each simulating a dataset, searching for roots, selecting one near the
/// focus point, and studentizing against the resolved target.
pub fn run_replications(exp: &Experiment) -> Result<McSummary> {
    exp.validate()?;
    let cfg = exp.effective_solver();
    let p = exp.estimator.dim();
    let mut sizes = Vec::with_capacity(exp.sizes.len());
    let mut unreliable = false;

    for &(n, delta) in &exp.sizes {
        let theta_bar = exp.limit.resolve(&exp.model, &exp.estimator, delta)?;
        if theta_bar.len() != p {
            return Err(Error::Shape(format!(
                "target has length {}, estimator has {p} parameters",
                theta_bar.len()
            )));
        }
        let g = exp.estimator.build(delta)?;
        let rho = exp.focus(&g, &cfg)?;

        let records: Vec<RepRecord> = (0..exp.replications as u64)
            .into_par_iter()
            .map(|rep| -> Result<RepRecord> {
                let mut rng = StreamRng::new(exp.master_seed, rep);
                let data = exp.model.simulate(n, delta, &mut rng)?;
                let roots = find_roots(&g, &data, &cfg)?;
                let outcome = select_root(&roots, g.space(), Some(&rho))?;
                let (studentized, ci_hit) = match &outcome {
                    EstimateOutcome::Solved { theta, .. } => {
                        let report = sandwich(
                            &g,
                            &data,
                            theta,
                            &VhatMode::OuterProduct,
                            exp.level,
                            Some(&theta_bar),
                        )?;
                        let hit = theta_bar
                            .iter()
                            .enumerate()
                            .map(|(j, t)| report.ci_lower[j] <= *t && *t <= report.ci_upper[j])
                            .collect();
                        (Some(report.studentized), Some(hit))
                    }
                    EstimateOutcome::Delta { .. } => (None, None),
                };
                Ok(RepRecord {
                    rep,
                    n,
                    delta,
                    outcome,
                    roots_found: roots.roots.len(),
                    studentized,
                    ci_hit,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let scale = scale_diag(g.scaling(), n, delta);
        let summary = summarize_size(n, delta, theta_bar, scale, records)?;
        if summary.delta_count * 5 > summary.replications {
            unreliable = true;
        }
        sizes.push(summary);
    }

    Ok(McSummary {
        level: exp.level,
        unreliable,
        sizes,
    })
}

fn summarize_size(
    n: usize,
    delta: f64,
    theta_bar: Vec<f64>,
    scale: Vec<f64>,
    records: Vec<RepRecord>,
) -> Result<SizeSummary> {
    let p = theta_bar.len();
    let solved_thetas: Vec<&[f64]> = records
        .iter()
        .filter_map(|r| r.outcome.theta())
        .collect();
    let solved = solved_thetas.len();
    let delta_count = records.len() - solved;

    let mut mean = None;
    let mut sd = None;
    let mut scaled_sd = None;
    let mut coverage = None;
    let mut ks = None;

    if solved >= 2 {
        let mut means = Vec::with_capacity(p);
        let mut sds = Vec::with_capacity(p);
        let mut scaled = Vec::with_capacity(p);
        for j in 0..p {
            let col: Vec<f64> = solved_thetas.iter().map(|t| t[j]).collect();
            let (m, s) = mean_sd(&col)?;
            means.push(m);
            sds.push(s);
            scaled.push(scale[j] * s);
        }
        mean = Some(means);
        sd = Some(sds);
        scaled_sd = Some(scaled);

        let mut cov = vec![0.0; p];
        for r in records.iter().filter(|r| r.ci_hit.is_some()) {
            for (j, hit) in r.ci_hit.as_ref().unwrap().iter().enumerate() {
                if *hit {
                    cov[j] += 1.0;
                }
            }
        }
        for c in &mut cov {
            *c /= solved as f64;
        }
        coverage = Some(cov);

        let mut kss = Vec::with_capacity(p);
        let mut all_finite = true;
        for j in 0..p {
            let col: Vec<f64> = records
                .iter()
                .filter_map(|r| r.studentized.as_ref().map(|s| s[j]))
                .collect();
            match ks_against_normal(&col) {
                Ok(k) => kss.push(k),
                Err(_) => {
                    all_finite = false;
                    break;
                }
            }
        }
        if all_finite {
            ks = Some(kss);
        }
    }

    Ok(SizeSummary {
        n,
        delta,
        theta_bar,
        scale,
        replications: records.len(),
        solved,
        delta_count,
        mean,
        sd,
        scaled_sd,
        coverage,
        ks,
        records,
    })
}

/// Which horizontal axis a rate regression uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateScale {
    /// Number of observations `n`.
    Observations,
    /// Time span `n * delta`.
    Span,
}

/// Least-squares slope of `log(empirical sd)` on `log(scale)` for one
/// coordinate.  A square-root convergence rate shows up as -0.5.
pub fn rate_slope(summary: &McSummary, scale: RateScale, coord: usize) -> Result<f64> {
    let mut pts = Vec::new();
    for s in &summary.sizes {
        let sd = s
            .sd
            .as_ref()
            .ok_or_else(|| Error::Domain(format!("size n={} has no sd (too few solved)", s.n)))?;
        if coord >= sd.len() {
            return Err(Error::Shape(format!(
                "coordinate {coord} out of range for {} parameters",
                sd.len()
            )));
        }
        let x = match scale {
            RateScale::Observations => s.n as f64,
            RateScale::Span => s.n as f64 * s.delta,
        };
        pts.push((x, sd[coord]));
    }
    if pts.len() < 3 {
        return Err(Error::Domain(format!(
            "rate regression needs at least 3 sizes, got {}",
            pts.len()
        )));
    }
    slope_log_log(&pts)
}

/// Recomputes coverage and the normality distance for one size, enforcing
/// the preconditions: at least 100 solved replications and non-degenerate
/// studentized samples.
pub fn coverage_and_normality(size: &SizeSummary) -> Result<(Vec<f64>, Vec<f64>)> {
    if size.solved < 100 {
        return Err(Error::Domain(format!(
            "need at least 100 solved replications, got {}",
            size.solved
        )));
    }
    let p = size.theta_bar.len();
    let mut coverage = vec![0.0; p];
    let mut ks = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = size
            .records
            .iter()
            .filter_map(|r| r.studentized.as_ref().map(|s| s[j]))
            .collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 {
            return Err(Error::Numerical(format!(
                "degenerate studentized sample in coordinate {j}: zero variance"
            )));
        }
        ks.push(ks_against_normal(&col)?);
        let hits = size
            .records
            .iter()
            .filter_map(|r| r.ci_hit.as_ref().map(|h| h[j]))
            .filter(|h| *h)
            .count();
        coverage[j] = hits as f64 / size.solved as f64;
    }
    Ok((coverage, ks))
}

/// Writes every replication as one CSV row:
/// `rep,n,delta,solved,theta_hat_1..p,stud_1..p,ci_hit_1..p`.
/// Failed replications leave the value fields empty.
pub fn write_records_csv(summary: &McSummary, path: &Path) -> Result<()> {
    let p = summary
        .sizes
        .first()
        .map(|s| s.theta_bar.len())
        .ok_or_else(|| Error::Shape("summary has no sizes".into()))?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "rep,n,delta,solved")?;
    for j in 1..=p {
        write!(w, ",theta_hat_{j}")?;
    }
    for j in 1..=p {
        write!(w, ",stud_{j}")?;
    }
    for j in 1..=p {
        write!(w, ",ci_hit_{j}")?;
    }
    writeln!(w)?;
    for size in &summary.sizes {
        for r in &size.records {
            write!(w, "{},{},{},", r.rep, r.n, r.delta)?;
            match r.outcome.theta() {
                Some(theta) => {
                    write!(w, "1")?;
                    for v in theta {
                        write!(w, ",{v}")?;
                    }
                    for v in r.studentized.as_ref().expect("solved rows carry pivots") {
                        write!(w, ",{v}")?;
                    }
                    for h in r.ci_hit.as_ref().expect("solved rows carry hits") {
                        write!(w, ",{}", if *h { 1 } else { 0 })?;
                    }
                }
                None => {
                    write!(w, "0")?;
                    for _ in 0..3 * p {
                        write!(w, ",")?;
                    }
                }
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the summary as pretty JSON.
pub fn write_summary_json(summary: &McSummary, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, summary)
        .map_err(|e| Error::Numerical(format!("cannot serialize summary: {e}")))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

//! Python bindings: datasets, catalog estimators with sandwich reports, path
//! simulators, and whole replication studies driven by TOML text.
//!
//! Build with `cargo build -p estfun-py --release` and import the produced
//! `libestfun_py.so` as `estfun_py` (see `python/smoke_test.py`).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use estfun::asymptotics::{sandwich, theta_bar_ar2_misspec, theta_bar_ou, VhatMode};
use estfun::catalog;
use estfun::config::ConfigFile;
use estfun::mc::run_replications;
use estfun::outcome::DELTA_DISTANCE;
use estfun::simulate::{
    ou_stationary_sd, simulate_ar, simulate_ou_exact, StreamRng, DEFAULT_BURN_IN,
};
use estfun::solver::{default_focus, find_roots, select_root};
use estfun::{Dataset, EstimateOutcome, SolverConfig};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A discretely sampled path or a panel of independent subjects.
#[pyclass(name = "Dataset", module = "estfun_py")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Scalar path; `delta` is the sampling step, 0 for unit-spaced data.
    #[new]
    #[pyo3(signature = (values, delta = 0.0))]
    fn new(values: Vec<f64>, delta: f64) -> PyResult<Self> {
        Ok(PyDataset { inner: Dataset::scalar(values, delta).map_err(err)? })
    }

    /// Panel of independent subject paths, all with the same length.
    #[staticmethod]
    fn longitudinal(subjects: Vec<Vec<f64>>, delta: f64) -> PyResult<Self> {
        Ok(PyDataset { inner: Dataset::longitudinal(subjects, delta).map_err(err)? })
    }

    /// Reads a scalar path from CSV with header `t,x` or `x`.
    #[staticmethod]
    #[pyo3(signature = (path, delta = None))]
    fn read_csv(path: PathBuf, delta: Option<f64>) -> PyResult<Self> {
        let file = File::open(&path).map_err(err)?;
        Ok(PyDataset { inner: Dataset::read_csv(BufReader::new(file), delta).map_err(err)? })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        let file = File::create(&path).map_err(err)?;
        self.inner.write_csv(&mut BufWriter::new(file)).map_err(err)
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn time_span(&self) -> f64 {
        self.inner.time_span()
    }

    fn values(&self) -> PyResult<Vec<f64>> {
        Ok(self.inner.scalar_values().map_err(err)?.to_vec())
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, delta={})", self.inner.n(), self.inner.delta())
    }
}

/// Outcome of one estimation: either a root with its sandwich report, or
/// the failure point with a reason.
#[pyclass(name = "Estimate", module = "estfun_py")]
struct PyEstimate {
    #[pyo3(get)]
    solved: bool,
    #[pyo3(get)]
    theta: Option<Vec<f64>>,
    #[pyo3(get)]
    reason: Option<String>,
    #[pyo3(get)]
    residual_norm: Option<f64>,
    #[pyo3(get)]
    iterations: Option<usize>,
    #[pyo3(get)]
    ci_lower: Option<Vec<f64>>,
    #[pyo3(get)]
    ci_upper: Option<Vec<f64>>,
    #[pyo3(get)]
    studentized: Option<Vec<f64>>,
    #[pyo3(get)]
    w_hat: Option<Vec<Vec<f64>>>,
    #[pyo3(get)]
    v_hat: Option<Vec<Vec<f64>>>,
    #[pyo3(get)]
    level: Option<f64>,
    json: String,
}

#[pymethods]
impl PyEstimate {
    /// The same JSON the command line prints.
    fn to_json(&self) -> &str {
        &self.json
    }

    fn __repr__(&self) -> String {
        match (&self.theta, &self.reason) {
            (Some(t), _) => format!("Estimate(solved=True, theta={t:?})"),
            (None, Some(r)) => format!("Estimate(solved=False, reason={r})"),
            _ => "Estimate(?)".into(),
        }
    }
}

/// A catalog estimating function bound to an optional sampling step.
#[pyclass(name = "Estimator", module = "estfun_py")]
struct PyEstimator {
    #[pyo3(get)]
    id: String,
    delta: Option<f64>,
}

impl PyEstimator {
    fn build(&self, data: &Dataset) -> PyResult<(estfun::EstimatingFunction, SolverConfig)> {
        let step = data.delta();
        let eff = self.delta.or((step > 0.0).then_some(step));
        let g = catalog::standard(&self.id, eff).map_err(err)?;
        let mut cfg = SolverConfig::default();
        cfg.search_box = catalog::standard_search_box(&self.id);
        Ok((g, cfg))
    }
}

#[pymethods]
impl PyEstimator {
    /// `id` is a catalog name such as `ar1_ls`; `delta` overrides the step
    /// taken from the dataset.
    #[new]
    #[pyo3(signature = (id, delta = None))]
    fn new(id: String, delta: Option<f64>) -> PyResult<Self> {
        // Probe the catalog now so unknown names fail at construction.
        catalog::standard(&id, delta.or(Some(1.0))).map_err(err)?;
        Ok(PyEstimator { id, delta })
    }

    /// Known catalog names.
    #[staticmethod]
    fn ids() -> Vec<&'static str> {
        vec![
            "ar1_ls",
            "ou_euler_ls",
            "moment_mean",
            "moment_meanvar",
            "hf_fixed_t",
            "hf_ergodic",
        ]
    }

    /// Solves the estimating equation on `data` and attaches interval and
    /// studentization output to the selected root.
    #[pyo3(signature = (data, rho = None, level = 0.95))]
    fn estimate(
        &self,
        data: &PyDataset,
        rho: Option<Vec<f64>>,
        level: f64,
    ) -> PyResult<PyEstimate> {
        let (g, cfg) = self.build(&data.inner)?;
        let roots = find_roots(&g, &data.inner, &cfg).map_err(err)?;
        let focus = match rho {
            Some(r) => r,
            None => default_focus(g.space(), &cfg).map_err(err)?,
        };
        let outcome = select_root(&roots, g.space(), Some(&focus)).map_err(err)?;

        let mut value = serde_json::to_value(&outcome).map_err(err)?;
        let estimate = match &outcome {
            EstimateOutcome::Solved { theta, residual_norm, iterations } => {
                let report =
                    sandwich(&g, &data.inner, theta, &VhatMode::OuterProduct, level, None)
                        .map_err(err)?;
                if let serde_json::Value::Object(map) = &mut value {
                    map.insert("report".into(), serde_json::to_value(&report).map_err(err)?);
                }
                PyEstimate {
                    solved: true,
                    theta: Some(theta.clone()),
                    reason: None,
                    residual_norm: Some(*residual_norm),
                    iterations: Some(*iterations),
                    ci_lower: Some(report.ci_lower.clone()),
                    ci_upper: Some(report.ci_upper.clone()),
                    studentized: Some(report.studentized.clone()),
                    w_hat: Some(report.w_hat.clone()),
                    v_hat: Some(report.v_hat.clone()),
                    level: Some(report.level),
                    json: String::new(),
                }
            }
            EstimateOutcome::Delta { reason } => PyEstimate {
                solved: false,
                theta: None,
                reason: Some(reason.to_string()),
                residual_norm: None,
                iterations: None,
                ci_lower: None,
                ci_upper: None,
                studentized: None,
                w_hat: None,
                v_hat: None,
                level: None,
                json: String::new(),
            },
        };
        let json = serde_json::to_string(&value).map_err(err)?;
        Ok(PyEstimate { json, ..estimate })
    }

    /// Value of the estimating function at `theta`.
    fn eval(&self, theta: Vec<f64>, data: &PyDataset) -> PyResult<Vec<f64>> {
        let (g, _) = self.build(&data.inner)?;
        g.eval(&theta, &data.inner).map_err(err)
    }

    /// Jacobian at `theta` as a list of rows.
    fn jacobian(&self, theta: Vec<f64>, data: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
        let (g, _) = self.build(&data.inner)?;
        let j = g.jacobian(&theta, &data.inner).map_err(err)?;
        Ok((0..j.nrows())
            .map(|r| (0..j.ncols()).map(|c| j[(r, c)]).collect())
            .collect())
    }

    fn __repr__(&self) -> String {
        match self.delta {
            Some(d) => format!("Estimator({}, delta={d})", self.id),
            None => format!("Estimator({})", self.id),
        }
    }
}

/// Output of a replication study.
#[pyclass(name = "Study", module = "estfun_py")]
struct PyStudy {
    #[pyo3(get)]
    unreliable: bool,
    #[pyo3(get)]
    digest: String,
    json: String,
}

#[pymethods]
impl PyStudy {
    /// The full per-size summary as JSON.
    fn summary_json(&self) -> &str {
        &self.json
    }

    fn __repr__(&self) -> String {
        format!("Study(unreliable={})", self.unreliable)
    }
}

/// Runs a replication study from TOML text (same schema as `estfun run`);
/// any `[output]` paths in the text are ignored here.
#[pyfunction]
#[pyo3(signature = (toml_text, seed = None))]
fn run_study(toml_text: &str, seed: Option<u64>) -> PyResult<PyStudy> {
    let cfg = ConfigFile::parse(toml_text).map_err(err)?;
    let mut exp = cfg.to_experiment();
    if let Some(s) = seed {
        exp.master_seed = s;
    }
    let summary = run_replications(&exp).map_err(err)?;
    Ok(PyStudy {
        unreliable: summary.unreliable,
        digest: estfun::cli::digest(&exp, &summary),
        json: serde_json::to_string_pretty(&summary).map_err(err)?,
    })
}

/// Stationary autoregression path, unit-spaced.
#[pyfunction]
#[pyo3(signature = (coeffs, n, seed, noise_sd = 1.0))]
fn simulate_ar_path(coeffs: Vec<f64>, n: usize, seed: u64, noise_sd: f64) -> PyResult<PyDataset> {
    let mut rng = StreamRng::new(seed, 0);
    let inner = simulate_ar(&coeffs, noise_sd, n, DEFAULT_BURN_IN, &mut rng).map_err(err)?;
    Ok(PyDataset { inner })
}

/// Mean-reverting diffusion sampled through its exact transition law;
/// without `start` the path begins at a stationary draw.
#[pyfunction]
#[pyo3(signature = (theta, sigma, n, delta, seed, start = None))]
fn simulate_ou_path(
    theta: f64,
    sigma: f64,
    n: usize,
    delta: f64,
    seed: u64,
    start: Option<f64>,
) -> PyResult<PyDataset> {
    let mut rng = StreamRng::new(seed, 0);
    let x0 = match start {
        Some(x) => x,
        None => {
            let sd = ou_stationary_sd(theta, sigma);
            rng.normal(0.0, sd)
        }
    };
    let inner = simulate_ou_exact(theta, sigma, x0, n, delta, &mut rng).map_err(err)?;
    Ok(PyDataset { inner })
}

/// Limit of the one-lag least-squares coefficient on two-lag data.
#[pyfunction]
fn theta_bar_ar2(theta1: f64, theta2: f64) -> PyResult<f64> {
    theta_bar_ar2_misspec(theta1, theta2).map_err(err)
}

/// Limit of the Euler-scheme fit on exactly sampled mean-reverting data.
#[pyfunction]
fn theta_bar_ou_step(theta0: f64, delta: f64) -> PyResult<f64> {
    theta_bar_ou(theta0, delta).map_err(err)
}

#[pymodule]
fn estfun_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyEstimator>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyStudy>()?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_ar_path, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_ou_path, m)?)?;
    m.add_function(wrap_pyfunction!(theta_bar_ar2, m)?)?;
    m.add_function(wrap_pyfunction!(theta_bar_ou_step, m)?)?;
    m.add("DELTA_DISTANCE", DELTA_DISTANCE)?;
    Ok(())
}

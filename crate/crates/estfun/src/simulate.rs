//! Path simulation with reproducible, splittable random number streams.
//!
//! Every replication draws from its own stream, identified by
//! `(master_seed, stream_index)`.  Streams are statistically independent and
//! their output does not depend on the order in which they are created or
//! consumed, so serial and parallel Monte Carlo runs produce identical
//! results.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Discarded initial steps when sampling a stationary autoregression.
pub const DEFAULT_BURN_IN: usize = 1000;
/// Euler refinement: internal steps per observed step.
pub const DEFAULT_SUBSTEPS: usize = 50;
/// Paths whose magnitude exceeds this are treated as numerically explosive.
pub const EXPLOSION_BOUND: f64 = 1e8;

/// A deterministic random stream addressed by `(master_seed, stream_index)`.
#[derive(Clone, Debug)]
pub struct StreamRng {
    master_seed: u64,
    stream_index: u64,
    inner: ChaCha12Rng,
}

impl StreamRng {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_index);
        StreamRng {
            master_seed,
            stream_index,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }
}

/// Spectral radius of the companion matrix of an autoregression.
fn companion_spectral_radius(coeffs: &[f64]) -> f64 {
    let q = coeffs.len();
    let m = DMatrix::from_fn(q, q, |i, j| {
        if i == 0 {
            coeffs[j]
        } else if j == i - 1 {
            1.0
        } else {
            0.0
        }
    });
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Simulates a stationary autoregression of order `coeffs.len()` and returns
/// `x_0, ..., x_n` (unit-spaced) after discarding `burn_in` warm-up steps.
pub fn simulate_ar(
    coeffs: &[f64],
    noise_sd: f64,
    n: usize,
    burn_in: usize,
    rng: &mut StreamRng,
) -> Result<Dataset> {
    if coeffs.is_empty() {
        return Err(Error::Shape("autoregression needs at least one coefficient".into()));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::Domain(format!("noise sd must be >= 0, got {noise_sd}")));
    }
    let radius = companion_spectral_radius(coeffs);
    if radius >= 1.0 {
        return Err(Error::Unstable(format!(
            "autoregression is not stationary: companion spectral radius {radius:.6} >= 1"
        )));
    }
    if n == 0 {
        return Err(Error::Shape("need n >= 1 increments".into()));
    }

    let q = coeffs.len();
    let mut state = vec![0.0; q];
    let mut out = Vec::with_capacity(n + 1);
    for step in 0..(burn_in + n + 1) {
        let mut x = noise_sd * rng.standard_normal();
        for (c, past) in coeffs.iter().zip(&state) {
            x += c * past;
        }
        state.rotate_right(1);
        state[0] = x;
        if step >= burn_in {
            out.push(x);
        }
    }
    Dataset::scalar(out, 0.0)
}

/// Simulates a mean-reverting Gaussian diffusion at spacing `delta` using
/// the exact transition law, starting from `x0`.
pub fn simulate_ou_exact(
    theta: f64,
    sigma: f64,
    x0: f64,
    n: usize,
    delta: f64,
    rng: &mut StreamRng,
) -> Result<Dataset> {
    if !(theta > 0.0 && sigma > 0.0) {
        return Err(Error::Domain(format!(
            "exact mean-reverting simulation needs theta > 0 and sigma > 0, got ({theta}, {sigma})"
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("sampling step must be positive, got {delta}")));
    }
    if n == 0 {
        return Err(Error::Shape("need n >= 1 increments".into()));
    }
    let rho = (-theta * delta).exp();
    let trans_sd = sigma * ((1.0 - rho * rho) / (2.0 * theta)).sqrt();
    let mut out = Vec::with_capacity(n + 1);
    let mut x = x0;
    out.push(x);
    for _ in 0..n {
        x = rho * x + trans_sd * rng.standard_normal();
        out.push(x);
    }
    Dataset::scalar(out, delta)
}

/// Stationary standard deviation of the mean-reverting diffusion.
pub fn ou_stationary_sd(theta: f64, sigma: f64) -> f64 {
    sigma / (2.0 * theta).sqrt()
}

/// Panel of independent mean-reverting paths: `subjects` paths, each with
/// `m` transitions at spacing `delta`, started from the stationary law.
pub fn simulate_ou_panel(
    theta: f64,
    sigma: f64,
    delta: f64,
    subjects: usize,
    m: usize,
    rng: &mut StreamRng,
) -> Result<Dataset> {
    if subjects == 0 || m == 0 {
        return Err(Error::Shape("panel needs subjects >= 1 and m >= 1".into()));
    }
    if !(theta > 0.0 && sigma > 0.0 && delta > 0.0) {
        return Err(Error::Domain(
            "panel simulation needs positive theta, sigma and delta".into(),
        ));
    }
    let rho = (-theta * delta).exp();
    let trans_sd = sigma * ((1.0 - rho * rho) / (2.0 * theta)).sqrt();
    let stat_sd = ou_stationary_sd(theta, sigma);
    let mut panel = Vec::with_capacity(subjects);
    for _ in 0..subjects {
        let mut path = Vec::with_capacity(m + 1);
        let mut y = stat_sd * rng.standard_normal();
        path.push(y);
        for _ in 0..m {
            y = rho * y + trans_sd * rng.standard_normal();
            path.push(y);
        }
        panel.push(path);
    }
    Dataset::longitudinal(panel, delta)
}

type Coef = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A scalar diffusion `dX = a(X; alpha) dt + b(X; beta) dW` described through
/// its drift, squared diffusion `c = b^2`, and the parameter derivatives the
/// estimating functions and limit formulas need.
#[derive(Clone)]
pub struct SdeModel {
    drift: Coef,
    drift_da: Coef,
    drift_daa: Coef,
    csq: Coef,
    csq_db: Coef,
    csq_dbb: Coef,
    x0: f64,
}

impl std::fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeModel").field("x0", &self.x0).finish()
    }
}

impl SdeModel {
    pub fn new(
        drift: Coef,
        drift_da: Coef,
        drift_daa: Coef,
        csq: Coef,
        csq_db: Coef,
        csq_dbb: Coef,
    ) -> Self {
        SdeModel {
            drift,
            drift_da,
            drift_daa,
            csq,
            csq_db,
            csq_dbb,
            x0: 0.0,
        }
    }

    /// Mean-reverting model `dX = -alpha X dt + beta dW`.
    pub fn ou() -> Self {
        SdeModel::new(
            Arc::new(|x, alpha| -alpha * x),
            Arc::new(|x, _| -x),
            Arc::new(|_, _| 0.0),
            Arc::new(|_, beta| beta * beta),
            Arc::new(|_, beta| 2.0 * beta),
            Arc::new(|_, _| 2.0),
        )
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn drift(&self, x: f64, alpha: f64) -> f64 {
        (self.drift)(x, alpha)
    }

    pub fn drift_da(&self, x: f64, alpha: f64) -> f64 {
        (self.drift_da)(x, alpha)
    }

    pub fn drift_daa(&self, x: f64, alpha: f64) -> f64 {
        (self.drift_daa)(x, alpha)
    }

    /// Squared diffusion coefficient `c(x; beta)`.
    pub fn csq(&self, x: f64, beta: f64) -> f64 {
        (self.csq)(x, beta)
    }

    pub fn csq_db(&self, x: f64, beta: f64) -> f64 {
        (self.csq_db)(x, beta)
    }

    pub fn csq_dbb(&self, x: f64, beta: f64) -> f64 {
        (self.csq_dbb)(x, beta)
    }

    pub fn diffusion(&self, x: f64, beta: f64) -> Result<f64> {
        let c = self.csq(x, beta);
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Domain(format!(
                "squared diffusion must be positive, got c({x}, {beta}) = {c}"
            )));
        }
        Ok(c.sqrt())
    }
}

/// Euler scheme for a scalar diffusion: `substeps` internal steps per
/// observed step, recording `n + 1` values at spacing `delta`.
pub fn simulate_sde_euler(
    model: &SdeModel,
    alpha: f64,
    beta: f64,
    n: usize,
    delta: f64,
    substeps: usize,
    rng: &mut StreamRng,
) -> Result<Dataset> {
    if n == 0 || substeps == 0 {
        return Err(Error::Shape("need n >= 1 and substeps >= 1".into()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("sampling step must be positive, got {delta}")));
    }
    let h = delta / substeps as f64;
    let sqrt_h = h.sqrt();
    let mut x = model.x0();
    let mut out = Vec::with_capacity(n + 1);
    out.push(x);
    for _ in 0..n {
        for _ in 0..substeps {
            let b = model.diffusion(x, beta)?;
            x += model.drift(x, alpha) * h + b * sqrt_h * rng.standard_normal();
            if !x.is_finite() || x.abs() > EXPLOSION_BOUND {
                return Err(Error::Unstable(format!(
                    "Euler path exploded (|x| = {:.3e} > {EXPLOSION_BOUND:.1e})",
                    x.abs()
                )));
            }
        }
        out.push(x);
    }
    Dataset::scalar(out, delta)
}

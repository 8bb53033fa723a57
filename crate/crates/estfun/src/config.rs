//! Declarative experiment files.
//!
//! A study is described in TOML with sections for the model, the estimator,
//! the sampling plan, the replication settings, optional solver overrides,
//! the reference limit, and output paths.  Unknown keys are rejected before
//! anything runs.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::mc::{EstimatorSpec, Experiment, LimitSource, ModelSpec};
use crate::solver::SolverConfig;

fn default_level() -> f64 {
    0.95
}

/// How the sampling step varies with the sample size.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepRule {
    /// The same step at every size; use 0 for unit-spaced discrete data.
    Fixed { delta: f64 },
    /// `delta = span / n`: ever finer sampling of a fixed window.
    FixedSpan { span: f64 },
    /// `delta = n^(-exponent)`: shrinking step with growing span when the
    /// exponent lies in (0, 1).
    PowerLaw { exponent: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Fixed { delta: 0.0 }
    }
}

impl StepRule {
    pub fn delta_for(&self, n: usize) -> f64 {
        match self {
            StepRule::Fixed { delta } => *delta,
            StepRule::FixedSpan { span } => span / n as f64,
            StepRule::PowerLaw { exponent } => (n as f64).powf(-exponent),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    /// Sample sizes, strictly increasing.
    pub n: Vec<usize>,
    #[serde(default)]
    pub step: StepRule,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Focus point for root selection; defaults to the search-region center.
    #[serde(default)]
    pub rho: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Study summary as JSON.
    #[serde(default)]
    pub summary_json: Option<PathBuf>,
    /// Per-replication rows as CSV.
    #[serde(default)]
    pub records_csv: Option<PathBuf>,
}

/// The full parsed experiment file.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSpec,
    pub estimator: EstimatorSpec,
    pub sampling: SamplingSection,
    pub mc: McSection,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Reference limit for coverage; defaults to the simulated parameter.
    #[serde(default)]
    pub limits: Option<LimitSource>,
    #[serde(default)]
    pub output: OutputSection,
}

impl ConfigFile {
    /// Parses a TOML document; parse errors keep their line and column.
    pub fn parse(text: &str) -> Result<ConfigFile> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and parses `path`, prefixing errors with the file name.
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Converts the file into a runnable experiment.
    pub fn to_experiment(&self) -> Experiment {
        let sizes = self
            .sampling
            .n
            .iter()
            .map(|&n| (n, self.sampling.step.delta_for(n)))
            .collect();
        Experiment {
            model: self.model.clone(),
            estimator: self.estimator.clone(),
            sizes,
            replications: self.mc.replications,
            master_seed: self.mc.master_seed,
            solver: self.solver.clone(),
            rho: self.mc.rho.clone(),
            limit: self.limits.clone().unwrap_or(LimitSource::TrueTheta),
            level: self.mc.level,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const GOOD: &str = r#"
        [model]
        family = "ar"
        coeffs = [0.5]
        noise_sd = 1.0

        [estimator]
        id = "ar1_ls"

        [sampling]
        n = [500, 2000]

        [mc]
        replications = 100
        master_seed = 1
    "#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ConfigFile::parse(GOOD).unwrap();
        assert!(matches!(cfg.limits, None));
        assert_relative_eq!(cfg.mc.level, 0.95);
        let exp = cfg.to_experiment();
        assert_eq!(exp.sizes, vec![(500, 0.0), (2000, 0.0)]);
        assert!(matches!(exp.limit, LimitSource::TrueTheta));
        assert_eq!(exp.solver.multistart_points, 32);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let bad = GOOD.replace("master_seed = 1", "master_seed = 1\nbogus_key = true");
        let err = ConfigFile::parse(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_key"), "message: {msg}");
        assert!(msg.contains("line"), "message should carry a location: {msg}");
    }

    #[test]
    fn unknown_estimator_id_is_rejected_by_name() {
        let bad = GOOD.replace("id = \"ar1_ls\"", "id = \"nonsense\"");
        let err = ConfigFile::parse(&bad).unwrap_err();
        assert!(err.to_string().contains("nonsense"), "{err}");
    }

    #[test]
    fn step_rules_produce_the_documented_schedules() {
        assert_relative_eq!(StepRule::Fixed { delta: 0.5 }.delta_for(100), 0.5);
        assert_relative_eq!(StepRule::FixedSpan { span: 1.0 }.delta_for(400), 0.0025);
        let pl = StepRule::PowerLaw { exponent: 2.0 / 3.0 };
        assert_relative_eq!(pl.delta_for(1000), 1e-2, max_relative = 1e-12);
        // Span grows while the step shrinks.
        let n = 10_000usize;
        let d = pl.delta_for(n);
        assert!(d < 1e-2 && n as f64 * d > 20.0);
    }

    #[test]
    fn solver_overrides_merge_with_defaults() {
        let with_solver = format!(
            "{GOOD}\n[solver]\nmultistart_points = 8\nsearch_box = [[-0.9], [0.9]]\n"
        );
        let cfg = ConfigFile::parse(&with_solver).unwrap();
        assert_eq!(cfg.solver.multistart_points, 8);
        assert_eq!(cfg.solver.max_iter, 100);
        assert_eq!(
            cfg.solver.search_box,
            Some((vec![-0.9], vec![0.9]))
        );
    }

    #[test]
    fn full_config_round_trip() {
        let text = r#"
            [model]
            family = "ou_exact"
            theta = 1.0
            sigma = 1.0

            [estimator]
            id = "ou_euler_ls"

            [sampling]
            n = [1000, 4000]
            step = { rule = "fixed", delta = 0.5 }

            [mc]
            replications = 200
            master_seed = 99
            level = 0.9

            [limits]
            kind = "ou_euler_pseudo"

            [output]
            summary_json = "out.json"
            records_csv = "out.csv"
        "#;
        let cfg = ConfigFile::parse(text).unwrap();
        let exp = cfg.to_experiment();
        assert_eq!(exp.sizes, vec![(1000, 0.5), (4000, 0.5)]);
        let bar = exp.limit.resolve(&exp.model, &exp.estimator, 0.5).unwrap();
        assert_relative_eq!(bar[0], 0.7869386805747332, epsilon = 1e-15);
        assert_eq!(cfg.output.summary_json.unwrap(), PathBuf::from("out.json"));
    }
}

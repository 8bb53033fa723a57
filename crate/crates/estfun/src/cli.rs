//! Command line front end.
//!
//! Two subcommands: `run` executes a replication study from a TOML file and
//! prints a per-size digest, `estimate` fits a catalog estimator to a CSV
//! path and prints the outcome as JSON.  Exit codes: 0 success, 1 error,
//! 2 study finished but too many replications failed, 3 the estimate is the
//! failure point.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::asymptotics::{sandwich, VhatMode};
use crate::catalog;
use crate::config::ConfigFile;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimating::EstimatingFunction;
use crate::mc::{
    rate_slope, run_replications, write_records_csv, write_summary_json, EstimatorSpec,
    Experiment, LimitSource, McSummary, ModelSpec, RateScale,
};
use crate::outcome::EstimateOutcome;
use crate::solver::{default_focus, find_roots, select_root, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNRELIABLE: i32 = 2;
pub const EXIT_DELTA: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "estfun", version, about = "Estimating-function inference for sampled paths")]
pub struct Cli {
    /// Worker threads; falls back to ESTFUN_THREADS, then all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the master seed of a study.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a replication study described by a TOML config file.
    Run {
        /// Path to the config file.
        config: PathBuf,
    },
    /// Estimate from a CSV path with header `t,x` or `x`.
    Estimate {
        /// Path to the data file.
        csv: PathBuf,
        /// Catalog estimator id, e.g. ar1_ls or ou_euler_ls.
        #[arg(long)]
        estimator: String,
        /// Sampling step; overrides the spacing of the t column.
        #[arg(long)]
        delta: Option<f64>,
        /// Focus point for root selection, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        rho: Option<Vec<f64>>,
        /// Confidence level for the reported intervals.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
}

/// Installs the global worker pool: the flag wins, then ESTFUN_THREADS, then
/// the default pool.  A no-op once a pool exists.
pub fn init_threads(threads: Option<usize>) {
    let n = threads.or_else(|| {
        std::env::var("ESTFUN_THREADS")
            .ok()
            .and_then(|s| s.trim().parse().ok())
    });
    if let Some(n) = n.filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Runs the parsed command and returns the process exit code.  Errors go to
/// stderr, machine-readable output to stdout.
pub fn dispatch(cli: Cli) -> i32 {
    init_threads(cli.threads);
    let outcome = match cli.command {
        Command::Run { config } => cmd_run(&config, cli.seed),
        Command::Estimate {
            csv,
            estimator,
            delta,
            rho,
            level,
        } => cmd_estimate(&csv, &estimator, delta, rho.as_deref(), level),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn cmd_run(path: &Path, seed_override: Option<u64>) -> Result<i32> {
    let cfg = ConfigFile::load(path)?;
    let mut exp = cfg.to_experiment();
    if let Some(seed) = seed_override {
        exp.master_seed = seed;
    }
    let summary = run_replications(&exp)?;
    if let Some(json_path) = &cfg.output.summary_json {
        write_summary_json(&summary, json_path)?;
    }
    if let Some(csv_path) = &cfg.output.records_csv {
        write_records_csv(&summary, csv_path)?;
    }
    print!("{}", digest(&exp, &summary));
    if summary.unreliable {
        eprintln!("warning: more than 20% of replications failed at some size");
        Ok(EXIT_UNRELIABLE)
    } else {
        Ok(EXIT_OK)
    }
}

fn cmd_estimate(
    csv: &Path,
    estimator: &str,
    delta: Option<f64>,
    rho: Option<&[f64]>,
    level: f64,
) -> Result<i32> {
    let file = File::open(csv).map_err(|e| Error::Config(format!("{}: {e}", csv.display())))?;
    let data = Dataset::read_csv(BufReader::new(file), delta)?;
    let step = data.delta();
    let g = catalog::standard(estimator, (step > 0.0).then_some(step))?;

    let mut cfg = SolverConfig::default();
    cfg.search_box = catalog::standard_search_box(estimator);
    let roots = find_roots(&g, &data, &cfg)?;
    let focus = focus_point(&g, &cfg, rho)?;
    let outcome = select_root(&roots, g.space(), Some(&focus))?;

    let mut value = serde_json::to_value(&outcome)
        .map_err(|e| Error::Numerical(format!("cannot serialize outcome: {e}")))?;
    let code = match &outcome {
        EstimateOutcome::Solved { theta, .. } => {
            let report = sandwich(&g, &data, theta, &VhatMode::OuterProduct, level, None)?;
            let report_value = serde_json::to_value(&report)
                .map_err(|e| Error::Numerical(format!("cannot serialize report: {e}")))?;
            if let serde_json::Value::Object(map) = &mut value {
                map.insert("report".into(), report_value);
            }
            EXIT_OK
        }
        EstimateOutcome::Delta { .. } => EXIT_DELTA,
    };
    println!(
        "{}",
        serde_json::to_string(&value)
            .map_err(|e| Error::Numerical(format!("cannot serialize outcome: {e}")))?
    );
    Ok(code)
}

fn focus_point(
    g: &EstimatingFunction,
    cfg: &SolverConfig,
    rho: Option<&[f64]>,
) -> Result<Vec<f64>> {
    match rho {
        Some(r) => Ok(r.to_vec()),
        None => default_focus(g.space(), cfg),
    }
}

fn model_label(m: &ModelSpec) -> &'static str {
    match m {
        ModelSpec::Ar { .. } => "ar",
        ModelSpec::OuExact { .. } => "ou_exact",
        ModelSpec::SdeEuler { .. } => "sde_euler",
        ModelSpec::OuLongitudinal { .. } => "ou_longitudinal",
    }
}

fn estimator_label(e: &EstimatorSpec) -> &'static str {
    match e {
        EstimatorSpec::Ar1Ls => "ar1_ls",
        EstimatorSpec::OuEulerLs => "ou_euler_ls",
        EstimatorSpec::MomentMean => "moment_mean",
        EstimatorSpec::MomentMeanvar => "moment_meanvar",
        EstimatorSpec::LongitudinalOu { .. } => "longitudinal_ou",
        EstimatorSpec::HfFixedT => "hf_fixed_t",
        EstimatorSpec::HfErgodic => "hf_ergodic",
    }
}

fn fmt_vec(v: &[f64], prec: usize) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.prec$}")).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_opt(v: &Option<Vec<f64>>, prec: usize) -> String {
    match v {
        Some(v) => fmt_vec(v, prec),
        None => "-".into(),
    }
}

/// One-screen study summary: header, the resolved target, one line per size,
/// and the fitted convergence-rate slope when three or more sizes ran.
pub fn digest(exp: &Experiment, summary: &McSummary) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "family={} estimator={} replications={} seed={} level={}",
        model_label(&exp.model),
        estimator_label(&exp.estimator),
        exp.replications,
        exp.master_seed,
        summary.level
    );

    // The simulated parameter, when the model/estimator pair defines one.
    let theta0 = exp
        .sizes
        .first()
        .and_then(|&(_, d)| LimitSource::TrueTheta.resolve(&exp.model, &exp.estimator, d).ok());
    if let Some(t0) = &theta0 {
        let _ = writeln!(out, "theta0={}", fmt_vec(t0, 6));
    }

    for s in &summary.sizes {
        let differs = match &theta0 {
            Some(t0) => {
                t0.len() != s.theta_bar.len()
                    || t0.iter().zip(&s.theta_bar).any(|(a, b)| (a - b).abs() > 1e-9)
            }
            None => true,
        };
        let target = if differs {
            format!(" theta_bar={}", fmt_vec(&s.theta_bar, 6))
        } else {
            String::new()
        };
        let _ = writeln!(
            out,
            "n={} delta={}:{} solved={} failures={} mean={} scaled_sd={} coverage={} ks={}",
            s.n,
            s.delta,
            target,
            s.solved,
            s.delta_count,
            fmt_opt(&s.mean, 6),
            fmt_opt(&s.scaled_sd, 4),
            fmt_opt(&s.coverage, 3),
            fmt_opt(&s.ks, 3),
        );
    }

    if summary.sizes.len() >= 3 {
        let p = exp.estimator.dim();
        let scales: Vec<RateScale> = match exp.estimator {
            EstimatorSpec::HfErgodic => vec![RateScale::Span, RateScale::Observations],
            _ => vec![RateScale::Observations; p],
        };
        let slopes: Vec<f64> = scales
            .iter()
            .enumerate()
            .filter_map(|(j, sc)| rate_slope(summary, *sc, j).ok())
            .collect();
        if slopes.len() == p {
            let _ = writeln!(out, "rate_slope={}", fmt_vec(&slopes, 3));
        }
    }
    if summary.unreliable {
        let _ = writeln!(out, "unreliable: failure share above 20% at some size");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::Experiment;

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_run_and_global_flags() {
        let cli = Cli::parse_from(["estfun", "--threads", "2", "run", "cfg.toml"]);
        assert_eq!(cli.threads, Some(2));
        assert!(matches!(cli.command, Command::Run { .. }));
    }

    #[test]
    fn parses_estimate_with_vector_rho() {
        let cli = Cli::parse_from([
            "estfun", "estimate", "data.csv", "--estimator", "hf_ergodic", "--rho", "1.0,0.5",
        ]);
        match cli.command {
            Command::Estimate { estimator, rho, delta, level, .. } => {
                assert_eq!(estimator, "hf_ergodic");
                assert_eq!(rho, Some(vec![1.0, 0.5]));
                assert_eq!(delta, None);
                assert_eq!(level, 0.95);
            }
            _ => panic!("expected estimate"),
        }
    }

    #[test]
    fn digest_reports_pseudo_true_target_next_to_theta0() {
        let text = r#"
            [model]
            family = "ou_exact"
            theta = 1.0
            sigma = 1.0

            [estimator]
            id = "ou_euler_ls"

            [sampling]
            n = [300, 600]
            step = { rule = "fixed", delta = 0.5 }

            [mc]
            replications = 40
            master_seed = 5

            [limits]
            kind = "ou_euler_pseudo"
        "#;
        let exp: Experiment = crate::config::ConfigFile::parse(text).unwrap().to_experiment();
        let summary = run_replications(&exp).unwrap();
        let text = digest(&exp, &summary);
        assert!(text.contains("theta0=[1.000000]"), "digest:\n{text}");
        assert!(text.contains("theta_bar=[0.786939]"), "digest:\n{text}");
        assert!(text.contains("family=ou_exact estimator=ou_euler_ls"), "digest:\n{text}");
    }

    #[test]
    fn digest_omits_target_when_it_equals_theta0() {
        let text = r#"
            [model]
            family = "ar"
            coeffs = [0.5]
            noise_sd = 1.0

            [estimator]
            id = "ar1_ls"

            [sampling]
            n = [80, 160, 320]

            [mc]
            replications = 40
            master_seed = 5
        "#;
        let exp: Experiment = crate::config::ConfigFile::parse(text).unwrap().to_experiment();
        let summary = run_replications(&exp).unwrap();
        let text = digest(&exp, &summary);
        assert!(!text.contains("theta_bar="), "digest:\n{text}");
        assert!(text.contains("rate_slope="), "digest:\n{text}");
    }
}

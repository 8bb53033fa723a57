//! Estimating-function inference for discretely observed stochastic processes.
//!
//! The crate is organised around a small pipeline: simulate (or load) a
//! discretely sampled path, pick an estimating function from the catalog,
//! solve `G_n(theta) = 0` with a damped Newton multistart, and attach
//! sandwich-type asymptotics to the selected root.  Estimators that fail to
//! produce a usable root return an explicit failure point rather than a
//! sentinel value, so Monte Carlo layers can account for failures honestly.

pub mod asymptotics;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod estimating;
pub mod mc;
pub mod outcome;
pub mod params;
pub mod quad;
pub mod scaling;
pub mod simulate;
pub mod solver;
pub mod stats;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use estimating::EstimatingFunction;
pub use outcome::{DeltaReason, EstimateOutcome};
pub use params::ParameterSpace;
pub use scaling::ScalingMatrix;
pub use solver::SolverConfig;

//! Result of an estimation attempt.
//!
//! A failed attempt is a first-class value, not a sentinel: the failure point
//! is carried as its own variant with a reason attached.  For Monte Carlo
//! accounting the failure point sits at conventional distance 1 from every
//! regular parameter value.

use serde::{Deserialize, Serialize};

/// Why the solver returned the failure point instead of an estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeltaReason {
    /// No start converged to a root inside the parameter space.
    NoRootFound,
    /// Iterates left the parameter space and could not be recovered.
    LeftDomain,
    /// Iteration budget exhausted before the residual tolerance was met.
    MaxIterations,
}

impl std::fmt::Display for DeltaReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DeltaReason::NoRootFound => "NoRootFound",
            DeltaReason::LeftDomain => "LeftDomain",
            DeltaReason::MaxIterations => "MaxIterations",
        };
        f.write_str(s)
    }
}

/// Outcome of solving `G_n(theta) = 0` on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum EstimateOutcome {
    Solved {
        theta: Vec<f64>,
        residual_norm: f64,
        iterations: usize,
    },
    Delta { reason: DeltaReason },
}

/// Conventional distance between the failure point and any regular value.
pub const DELTA_DISTANCE: f64 = 1.0;

impl EstimateOutcome {
    pub fn delta(reason: DeltaReason) -> Self {
        EstimateOutcome::Delta { reason }
    }

    pub fn is_solved(&self) -> bool {
        matches!(self, EstimateOutcome::Solved { .. })
    }

    /// Estimate if solved, `None` for the failure point.
    pub fn theta(&self) -> Option<&[f64]> {
        match self {
            EstimateOutcome::Solved { theta, .. } => Some(theta),
            EstimateOutcome::Delta { .. } => None,
        }
    }
}

//! Diagonal rate matrices used to scale estimating functions and errors.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Diagonal scaling `A_n` applied to `G_n` and to estimation errors when
/// studentizing.  Both presets grow without bound in `n`, which is what makes
/// the scaled error distributions non-degenerate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMatrix {
    /// `sqrt(n) * I_p`: one common rate for all coordinates.
    SqrtN { dim: usize },
    /// `diag(sqrt(T_n), sqrt(n))` for two-parameter high-frequency designs
    /// where the first coordinate converges at the slower time-span rate.
    SqrtSpanSqrtN,
}

impl ScalingMatrix {
    pub fn dim(&self) -> usize {
        match self {
            ScalingMatrix::SqrtN { dim } => *dim,
            ScalingMatrix::SqrtSpanSqrtN => 2,
        }
    }

    /// Diagonal of `A_n` for the given dataset.
    pub fn diagonal(&self, data: &Dataset) -> Result<Vec<f64>> {
        let n = data.n() as f64;
        match self {
            ScalingMatrix::SqrtN { dim } => Ok(vec![n.sqrt(); *dim]),
            ScalingMatrix::SqrtSpanSqrtN => {
                let span = data.time_span();
                if span <= 0.0 {
                    return Err(Error::Domain(
                        "mixed-rate scaling needs a positive time span".into(),
                    ));
                }
                Ok(vec![span.sqrt(), n.sqrt()])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn path(n: usize, delta: f64) -> Dataset {
        Dataset::scalar(vec![0.0; n + 1], delta).unwrap()
    }

    #[test]
    fn sqrt_n_preset() {
        let a = ScalingMatrix::SqrtN { dim: 2 }.diagonal(&path(100, 0.0)).unwrap();
        assert_eq!(a, vec![10.0, 10.0]);
    }

    #[test]
    fn mixed_preset_uses_span_then_n() {
        let a = ScalingMatrix::SqrtSpanSqrtN.diagonal(&path(400, 0.25)).unwrap();
        assert_relative_eq!(a[0], 10.0);
        assert_relative_eq!(a[1], 20.0);
    }

    #[test]
    fn mixed_preset_needs_positive_span() {
        assert!(ScalingMatrix::SqrtSpanSqrtN.diagonal(&path(400, 0.0)).is_err());
    }

    #[test]
    fn entries_increase_with_n() {
        for preset in [ScalingMatrix::SqrtN { dim: 1 }, ScalingMatrix::SqrtSpanSqrtN] {
            let mut prev = vec![0.0; preset.dim()];
            for n in [10, 100, 1000] {
                let diag = preset.diagonal(&path(n, 0.1)).unwrap();
                for (d, p) in diag.iter().zip(&prev) {
                    assert!(d > p);
                }
                prev = diag;
            }
        }
    }
}

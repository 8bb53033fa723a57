//! Parameter spaces and the metric used for root selection.
//!
//! Two kinds of space are supported: a compact box with the usual Euclidean
//! metric, and an open set carried to `R^p` by a coordinatewise bijection
//! `psi` (identity, log, atanh).  Distances between parameters are always
//! measured in `psi`-coordinates, which is what makes "nearest root to a
//! focus point" well defined on open sets like `(0, inf)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coordinatewise bijection from an open interval onto the real line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordMap {
    /// Full real line, `psi(x) = x`.
    Identity,
    /// Positive half line, `psi(x) = ln x`.
    Log,
    /// Interval `(-1, 1)`, `psi(x) = atanh x`.
    Atanh,
}

impl CoordMap {
    pub fn contains(self, x: f64) -> bool {
        match self {
            CoordMap::Identity => x.is_finite(),
            CoordMap::Log => x.is_finite() && x > 0.0,
            CoordMap::Atanh => x > -1.0 && x < 1.0,
        }
    }

    pub fn forward(self, x: f64) -> f64 {
        match self {
            CoordMap::Identity => x,
            CoordMap::Log => x.ln(),
            CoordMap::Atanh => x.atanh(),
        }
    }

    pub fn inverse(self, y: f64) -> f64 {
        match self {
            CoordMap::Identity => y,
            CoordMap::Log => y.exp(),
            CoordMap::Atanh => y.tanh(),
        }
    }

    /// Derivative of the forward map, the diagonal of the `psi` Jacobian.
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            CoordMap::Identity => 1.0,
            CoordMap::Log => 1.0 / x,
            CoordMap::Atanh => 1.0 / (1.0 - x * x),
        }
    }
}

#[derive(Clone, Debug)]
enum SpaceKind {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Mapped { maps: Vec<CoordMap> },
}

/// Parameter space of an estimating function.
#[derive(Clone, Debug)]
pub struct ParameterSpace {
    kind: SpaceKind,
}

impl ParameterSpace {
    /// Compact box `[lower_1, upper_1] x ... x [lower_p, upper_p]`.
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Shape(format!(
                "box bounds must be non-empty and of equal length, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::Domain(format!(
                    "box bounds must satisfy lower < upper componentwise, coordinate {j} has [{lo}, {hi}]"
                )));
            }
        }
        Ok(ParameterSpace {
            kind: SpaceKind::Box { lower, upper },
        })
    }

    /// Open set defined by one coordinate map per component.
    pub fn mapped(maps: Vec<CoordMap>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::Shape("parameter space needs at least one coordinate".into()));
        }
        Ok(ParameterSpace {
            kind: SpaceKind::Mapped { maps },
        })
    }

    /// All of `R^p`.
    pub fn reals(dim: usize) -> Self {
        ParameterSpace::mapped(vec![CoordMap::Identity; dim]).expect("dim > 0")
    }

    /// `(0, inf)^p`.
    pub fn positive(dim: usize) -> Self {
        ParameterSpace::mapped(vec![CoordMap::Log; dim]).expect("dim > 0")
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SpaceKind::Box { lower, .. } => lower.len(),
            SpaceKind::Mapped { maps } => maps.len(),
        }
    }

    /// Box bounds when the space is compact, `None` for mapped spaces.
    pub fn bounds(&self) -> Option<(&[f64], &[f64])> {
        match &self.kind {
            SpaceKind::Box { lower, upper } => Some((lower, upper)),
            SpaceKind::Mapped { .. } => None,
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        if theta.len() != self.dim() {
            return false;
        }
        match &self.kind {
            SpaceKind::Box { lower, upper } => theta
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (lo, hi))| x.is_finite() && *x >= *lo && *x <= *hi),
            SpaceKind::Mapped { maps } => {
                theta.iter().zip(maps).all(|(x, m)| m.contains(*x))
            }
        }
    }

    /// Coordinates of `theta` in the metric chart (identity on boxes).
    pub fn psi(&self, theta: &[f64]) -> Vec<f64> {
        match &self.kind {
            SpaceKind::Box { .. } => theta.to_vec(),
            SpaceKind::Mapped { maps } => {
                theta.iter().zip(maps).map(|(x, m)| m.forward(*x)).collect()
            }
        }
    }

    pub fn psi_inv(&self, y: &[f64]) -> Vec<f64> {
        match &self.kind {
            SpaceKind::Box { .. } => y.to_vec(),
            SpaceKind::Mapped { maps } => {
                y.iter().zip(maps).map(|(v, m)| m.inverse(*v)).collect()
            }
        }
    }

    /// Diagonal of the `psi` Jacobian at `theta`.
    pub fn psi_jacobian_diag(&self, theta: &[f64]) -> Vec<f64> {
        match &self.kind {
            SpaceKind::Box { .. } => vec![1.0; theta.len()],
            SpaceKind::Mapped { maps } => {
                theta.iter().zip(maps).map(|(x, m)| m.deriv(*x)).collect()
            }
        }
    }

    /// Metric `d(a, b) = |psi(a) - psi(b)|_2`.  Errors if either point is
    /// outside the space.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        for (label, point) in [("first", a), ("second", b)] {
            if !self.contains(point) {
                return Err(Error::Domain(format!(
                    "{label} argument {point:?} lies outside the parameter space"
                )));
            }
        }
        let pa = self.psi(a);
        let pb = self.psi(b);
        Ok(pa
            .iter()
            .zip(&pb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt())
    }
}

/// `true` when `pa` precedes `pb` lexicographically; used to break ties
/// between roots equidistant from the focus point.
pub fn lex_less(pa: &[f64], pb: &[f64]) -> bool {
    for (x, y) in pa.iter().zip(pb) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn box_membership_is_closed() {
        let sp = ParameterSpace::boxed(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert!(sp.contains(&[-1.0, 0.0]));
        assert!(sp.contains(&[1.0, 2.0]));
        assert!(sp.contains(&[0.3, 1.7]));
        assert!(!sp.contains(&[1.0 + 1e-12, 0.5]));
        assert!(!sp.contains(&[0.0, f64::NAN]));
        assert!(!sp.contains(&[0.0]));
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let err = ParameterSpace::boxed(vec![0.0], vec![0.0]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(ParameterSpace::boxed(vec![1.0], vec![0.0]).is_err());
        assert!(ParameterSpace::boxed(vec![], vec![]).is_err());
    }

    #[test]
    fn log_chart_distance() {
        let sp = ParameterSpace::positive(1);
        let e = std::f64::consts::E;
        let d = sp.distance(&[e * e], &[e]).unwrap();
        assert_relative_eq!(d, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn distance_rejects_points_outside_the_space() {
        let sp = ParameterSpace::positive(1);
        assert!(matches!(
            sp.distance(&[-1.0], &[1.0]),
            Err(Error::Domain(_))
        ));
        let boxed = ParameterSpace::boxed(vec![0.0], vec![1.0]).unwrap();
        assert!(boxed.distance(&[0.5], &[2.0]).is_err());
    }

    #[test]
    fn identity_chart_on_boxes() {
        let sp = ParameterSpace::boxed(vec![-2.0], vec![2.0]).unwrap();
        assert_eq!(sp.psi(&[0.7]), vec![0.7]);
        assert_relative_eq!(sp.distance(&[-1.0], &[1.5]).unwrap(), 2.5);
    }

    #[test]
    fn lex_order_breaks_ties() {
        assert!(lex_less(&[1.0, 5.0], &[1.0, 6.0]));
        assert!(!lex_less(&[1.0, 6.0], &[1.0, 6.0]));
        assert!(!lex_less(&[2.0, 0.0], &[1.0, 9.0]));
    }

    proptest! {
        #[test]
        fn psi_roundtrip_log(x in 1e-6f64..1e6) {
            let sp = ParameterSpace::positive(1);
            let back = sp.psi_inv(&sp.psi(&[x]))[0];
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }

        #[test]
        fn psi_roundtrip_atanh(x in -0.999f64..0.999) {
            let sp = ParameterSpace::mapped(vec![CoordMap::Atanh]).unwrap();
            let back = sp.psi_inv(&sp.psi(&[x]))[0];
            prop_assert!((back - x).abs() <= 1e-12);
        }

        #[test]
        fn distance_is_a_metric_sample(
            a in -0.9f64..0.9, b in -0.9f64..0.9, c in -0.9f64..0.9
        ) {
            let sp = ParameterSpace::mapped(vec![CoordMap::Atanh]).unwrap();
            let dab = sp.distance(&[a], &[b]).unwrap();
            let dba = sp.distance(&[b], &[a]).unwrap();
            let dac = sp.distance(&[a], &[c]).unwrap();
            let dcb = sp.distance(&[c], &[b]).unwrap();
            prop_assert!((dab - dba).abs() <= 1e-15);
            prop_assert!(dab <= dac + dcb + 1e-12);
            prop_assert!((a == b) == (dab == 0.0));
        }
    }
}

//! Observed data: a discretely sampled scalar path, or a panel of short
//! paths for longitudinal designs.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Values {
    Scalar(Vec<f64>),
    Panel(Vec<Vec<f64>>),
}

/// A dataset with its sampling step `delta` (`0` means unit-spaced
/// observations of a discrete-time model).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    values: Values,
    delta: f64,
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Shape(format!("{what} contains a non-finite value at index {i}")));
    }
    Ok(())
}

impl Dataset {
    /// Single path `x_0, ..., x_N` observed at spacing `delta`.
    pub fn scalar(values: Vec<f64>, delta: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("dataset must contain at least one observation".into()));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::Domain(format!("sampling step must be finite and >= 0, got {delta}")));
        }
        check_finite(&values, "path")?;
        Ok(Dataset {
            values: Values::Scalar(values),
            delta,
        })
    }

    /// Panel of independent subjects, each observed at `m + 1` times with
    /// common spacing `delta`.  All subjects must have the same length.
    pub fn longitudinal(subjects: Vec<Vec<f64>>, delta: f64) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Shape("panel must contain at least one subject".into()));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::Domain(format!("sampling step must be finite and >= 0, got {delta}")));
        }
        let len = subjects[0].len();
        if len < 2 {
            return Err(Error::Shape("each subject needs at least two observations".into()));
        }
        for (i, subj) in subjects.iter().enumerate() {
            if subj.len() != len {
                return Err(Error::Shape(format!(
                    "panel is ragged: subject 0 has {len} observations, subject {i} has {}",
                    subj.len()
                )));
            }
            check_finite(subj, "panel")?;
        }
        Ok(Dataset {
            values: Values::Panel(subjects),
            delta,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of usable increments (scalar path) or subjects (panel).
    pub fn n(&self) -> usize {
        match &self.values {
            Values::Scalar(v) => v.len() - 1,
            Values::Panel(s) => s.len(),
        }
    }

    /// Observed time span `n * delta`.
    pub fn time_span(&self) -> f64 {
        self.n() as f64 * self.delta
    }

    pub fn is_panel(&self) -> bool {
        matches!(self.values, Values::Panel(_))
    }

    pub fn scalar_values(&self) -> Result<&[f64]> {
        match &self.values {
            Values::Scalar(v) => Ok(v),
            Values::Panel(_) => Err(Error::Shape(
                "estimating function expects a scalar path, got a panel".into(),
            )),
        }
    }

    pub fn subjects(&self) -> Result<&[Vec<f64>]> {
        match &self.values {
            Values::Panel(s) => Ok(s),
            Values::Scalar(_) => Err(Error::Shape(
                "estimating function expects a panel, got a scalar path".into(),
            )),
        }
    }

    /// Writes the path as CSV with header `t,x`.  Unit-spaced data uses the
    /// observation index as `t`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let values = self.scalar_values()?;
        writeln!(out, "t,x")?;
        for (i, x) in values.iter().enumerate() {
            let t = if self.delta > 0.0 { i as f64 * self.delta } else { i as f64 };
            writeln!(out, "{t},{x}")?;
        }
        Ok(())
    }

    /// Reads a scalar path from CSV with header `t,x` or `x`.  The sampling
    /// step is taken from `delta`, falling back to the spacing of the `t`
    /// column, falling back to unit spacing.
    pub fn read_csv<R: BufRead>(input: R, delta: Option<f64>) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => return Err(Error::Shape("csv is empty".into())),
        };
        let has_t = match header.trim_start_matches('\u{feff}').trim() {
            "t,x" => true,
            "x" => false,
            other => {
                return Err(Error::Shape(format!(
                    "line 1: expected header 't,x' or 'x', got '{other}'"
                )))
            }
        };

        let mut ts = Vec::new();
        let mut xs = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            let expected = if has_t { 2 } else { 1 };
            if fields.len() != expected {
                return Err(Error::Shape(format!(
                    "line {lineno}: expected {expected} fields, got {}",
                    fields.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Shape(format!("line {lineno}: '{s}' is not a number")))
            };
            if has_t {
                ts.push(parse(fields[0])?);
                xs.push(parse(fields[1])?);
            } else {
                xs.push(parse(fields[0])?);
            }
        }

        let delta = match delta {
            Some(d) => d,
            None if has_t && ts.len() >= 2 => {
                let d = ts[1] - ts[0];
                if !(d.is_finite() && d > 0.0) {
                    return Err(Error::Shape(format!(
                        "t column must be strictly increasing, first spacing is {d}"
                    )));
                }
                // A unit-indexed t column means unit spacing, i.e. delta 0.
                if (d - 1.0).abs() < 1e-12 {
                    0.0
                } else {
                    d
                }
            }
            None => 0.0,
        };
        Dataset::scalar(xs, delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn increment_count_and_time_span() {
        let d = Dataset::scalar(vec![0.0, 1.0, 0.5, 0.2], 0.5).unwrap();
        assert_eq!(d.n(), 3);
        assert_relative_eq!(d.time_span(), 1.5);
        let unit = Dataset::scalar(vec![1.0, 2.0], 0.0).unwrap();
        assert_eq!(unit.n(), 1);
        assert_eq!(unit.time_span(), 0.0);
    }

    #[test]
    fn panel_counts_subjects() {
        let d = Dataset::longitudinal(vec![vec![0.0, 1.0], vec![0.5, 0.3]], 0.5).unwrap();
        assert_eq!(d.n(), 2);
        assert!(d.is_panel());
        assert!(d.scalar_values().is_err());
    }

    #[test]
    fn ragged_panel_rejected() {
        let err = Dataset::longitudinal(vec![vec![0.0, 1.0], vec![0.5]], 0.5).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn non_finite_values_rejected() {
        assert!(Dataset::scalar(vec![0.0, f64::NAN], 0.0).is_err());
        assert!(Dataset::scalar(vec![0.0, f64::INFINITY], 0.0).is_err());
    }

    #[test]
    fn csv_roundtrip_preserves_values() {
        let d = Dataset::scalar(vec![0.25, -1.5, 3.0], 0.5).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x\n0,0.25\n"));
        let back = Dataset::read_csv(&buf[..], None).unwrap();
        assert_eq!(back.scalar_values().unwrap(), d.scalar_values().unwrap());
        assert_relative_eq!(back.delta(), 0.5);
    }

    #[test]
    fn csv_without_t_column() {
        let back = Dataset::read_csv("x\n1\n0.5\n0.25\n".as_bytes(), None).unwrap();
        assert_eq!(back.scalar_values().unwrap(), &[1.0, 0.5, 0.25]);
        assert_eq!(back.delta(), 0.0);
    }

    #[test]
    fn malformed_csv_is_line_anchored() {
        let err = Dataset::read_csv("t,x\n0,1\n0.5,abc\n".as_bytes(), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(Dataset::read_csv("time,value\n0,1\n".as_bytes(), None).is_err());
        let err = Dataset::read_csv("t,x\n0,1,2\n".as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn unit_indexed_t_column_reads_as_unit_spacing() {
        let back = Dataset::read_csv("t,x\n0,1\n1,0.5\n2,0.25\n".as_bytes(), None).unwrap();
        assert_eq!(back.delta(), 0.0);
    }
}

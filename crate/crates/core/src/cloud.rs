//! Dense point clouds stored row-major.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `n_points` samples in an ambient space of dimension `dim`, one row per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    data: Vec<f64>,
    n_points: usize,
    dim: usize,
}

impl PointCloud {
    /// Builds a cloud from a row-major buffer. Requires at least two points,
    /// a positive dimension and finite entries.
    pub fn new(data: Vec<f64>, n_points: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("point dimension must be at least 1"));
        }
        if n_points < 2 {
            return Err(invalid(format!("need at least 2 points, got {n_points}")));
        }
        if data.len() != n_points * dim {
            return Err(invalid(format!(
                "buffer of length {} does not hold {n_points} x {dim} values",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite entry at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            data,
            n_points,
            dim,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(invalid(format!(
                    "row {i} has {} columns, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(data, rows.len(), dim)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_points
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Returns a cloud with rows reordered so that row `i` is the old row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_points {
            return Err(invalid("permutation length does not match the cloud"));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Self::new(data, self.n_points, self.dim)
    }

    /// Largest pairwise Euclidean distance.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.n_points {
            for j in (i + 1)..self.n_points {
                best = best.max(sq_dist(self.row(i), self.row(j)));
            }
        }
        best.sqrt()
    }

    /// Parses headerless comma-separated rows. Blank lines are skipped.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let rows = parse_csv_rows(text)?;
        Self::from_rows(&rows)
    }

    pub fn to_csv_string(&self) -> String {
        rows_to_csv(self.rows())
    }
}

/// Parses headerless CSV into rows of floats; blank lines and `#` comments are skipped.
pub fn parse_csv_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    invalid(format!("line {}: cannot parse '{}' as a number", lineno + 1, tok.trim()))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Formats rows as CSV using the shortest round-trip decimal form of each value.
pub fn rows_to_csv<'a, I>(rows: I) -> String
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut out = String::new();
    for row in rows {
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(PointCloud::new(vec![1.0, 2.0], 1, 2).is_err());
        assert!(PointCloud::new(vec![1.0, 2.0, 3.0], 2, 2).is_err());
        assert!(PointCloud::new(vec![], 2, 0).is_err());
        assert!(PointCloud::new(vec![0.0, f64::NAN], 2, 1).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let cloud = PointCloud::from_rows(&[[0.1, -2.5e-7], [1.0 / 3.0, 1e300]]).unwrap();
        let text = cloud.to_csv_string();
        assert_eq!(PointCloud::from_csv_str(&text).unwrap(), cloud);
    }

    #[test]
    fn csv_reports_bad_tokens() {
        let err = PointCloud::from_csv_str("1,2\n3,x\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(PointCloud::from_csv_str("1,2\n3\n").is_err());
    }

    #[test]
    fn csv_skips_comments() {
        let cloud = PointCloud::from_csv_str("# x,y\n1,2\n\n3,4\n").unwrap();
        assert_eq!(cloud.len(), 2);
    }

    #[test]
    fn diameter_of_square() {
        let cloud = PointCloud::from_rows(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!((cloud.diameter() - 2f64.sqrt()).abs() < 1e-15);
    }
}

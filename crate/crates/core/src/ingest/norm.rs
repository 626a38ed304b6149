//! Z-score normalization statistics fitted on the training split.

use super::record::FlowRecord;
use crate::error::{Error, Result};

/// Floor applied to every standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Mean of `ln(1 + degree)` over training nodes.
    pub deg_mean: f64,
    /// Standard deviation of `ln(1 + degree)` over training nodes.
    pub deg_std: f64,
}

/// Welford accumulator.
#[derive(Debug, Clone, Default)]
struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    #[inline]
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn std(&self) -> f64 {
        if self.n == 0 {
            return STD_FLOOR;
        }
        (self.m2 / self.n as f64).sqrt().max(STD_FLOOR)
    }
}

impl NormStats {
    /// Identity transform for `dim` features.
    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            deg_mean: 0.0,
            deg_std: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Per-feature population mean and standard deviation. Degree statistics
    /// stay at the identity until [`NormStats::fit_degrees`] is called.
    pub fn fit(records: &[FlowRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or(Error::EmptyInput("normalization fit needs at least one record"))?;
        let dim = first.features.len();
        let mut acc = vec![Running::default(); dim];
        for r in records {
            if r.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "record features",
                    expected: dim,
                    actual: r.features.len(),
                });
            }
            for (a, &x) in acc.iter_mut().zip(&r.features) {
                a.push(x);
            }
        }
        Ok(NormStats {
            mean: acc.iter().map(|a| a.mean).collect(),
            std: acc.iter().map(Running::std).collect(),
            deg_mean: 0.0,
            deg_std: 1.0,
        })
    }

    /// Fits the degree normalizer on `ln(1 + d)` over the given raw degrees.
    pub fn fit_degrees<I: IntoIterator<Item = f64>>(&mut self, degrees: I) -> Result<()> {
        let mut acc = Running::default();
        for d in degrees {
            acc.push(d.ln_1p());
        }
        if acc.n == 0 {
            return Err(Error::EmptyInput("degree normalization needs at least one node"));
        }
        self.deg_mean = acc.mean;
        self.deg_std = acc.std();
        Ok(())
    }

    #[inline]
    pub fn normalize_degree(&self, degree: f64) -> f64 {
        (degree.ln_1p() - self.deg_mean) / self.deg_std
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "normalization input",
                expected: self.dim(),
                actual: len,
            });
        }
        Ok(())
    }

    /// `(x − mean) / std` on one feature vector. Not idempotent.
    pub fn normalize_in_place(&self, x: &mut [f64]) -> Result<()> {
        self.check(x.len())?;
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
        Ok(())
    }

    pub fn denormalize_in_place(&self, x: &mut [f64]) -> Result<()> {
        self.check(x.len())?;
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
        Ok(())
    }

    /// Row-major `rows × dim` feature matrix, normalized in place.
    pub fn normalize_matrix(&self, data: &mut [f64]) -> Result<()> {
        let d = self.dim();
        if d == 0 || data.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                context: "feature matrix width",
                expected: d,
                actual: data.len(),
            });
        }
        for row in data.chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }

    /// Normalized copy of `records`.
    pub fn apply(&self, records: &[FlowRecord]) -> Result<Vec<FlowRecord>> {
        records
            .iter()
            .map(|r| {
                let mut out = r.clone();
                self.normalize_in_place(&mut out.features)?;
                Ok(out)
            })
            .collect()
    }
}

pub fn fit_normalization(records: &[FlowRecord]) -> Result<NormStats> {
    NormStats::fit(records)
}

pub fn apply_normalization(records: &[FlowRecord], stats: &NormStats) -> Result<Vec<FlowRecord>> {
    stats.apply(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(f: Vec<f64>) -> FlowRecord {
        FlowRecord {
            flow_id: 0,
            src_ip: "a".into(),
            dst_ip: "b".into(),
            timestamp: 0.0,
            features: f,
            label: None,
        }
    }

    #[test]
    fn two_point_stats() {
        let s = NormStats::fit(&[rec(vec![0.0]), rec(vec![2.0])]).unwrap();
        assert_eq!(s.mean, [1.0]);
        assert_eq!(s.std, [1.0]);
    }

    #[test]
    fn constant_column_floors_std() {
        let recs = vec![rec(vec![5.0, 1.0]), rec(vec![5.0, 3.0]), rec(vec![5.0, 2.0])];
        let s = NormStats::fit(&recs).unwrap();
        assert_eq!(s.std[0], STD_FLOOR);
        let n = s.apply(&recs).unwrap();
        assert!(n.iter().all(|r| r.features[0] == 0.0));
    }

    #[test]
    fn empty_and_ragged_inputs() {
        assert!(matches!(NormStats::fit(&[]), Err(Error::EmptyInput(_))));
        assert!(NormStats::fit(&[rec(vec![1.0]), rec(vec![1.0, 2.0])]).is_err());
        let s = NormStats::identity(2);
        assert!(s.apply(&[rec(vec![1.0])]).is_err());
    }

    #[test]
    fn mean_maps_to_zero() {
        let recs = vec![rec(vec![1.0, 10.0]), rec(vec![3.0, 30.0]), rec(vec![8.0, -4.0])];
        let s = NormStats::fit(&recs).unwrap();
        let mut x = s.mean.clone();
        s.normalize_in_place(&mut x).unwrap();
        assert!(x.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn degree_normalizer() {
        let mut s = NormStats::identity(1);
        s.fit_degrees([1.0, 1.0, 3.0, 3.0]).unwrap();
        let lo = 2f64.ln();
        let hi = 4f64.ln();
        assert!((s.deg_mean - (lo + hi) / 2.0).abs() < 1e-15);
        assert!((s.normalize_degree(3.0) - 1.0).abs() < 1e-12);
        assert!(s.fit_degrees(std::iter::empty()).is_err());
    }
}

//! Percentile bucketing of standardized values for the embedding baselines.

use serde::{Deserialize, Serialize};

use super::sequence::GroupedSequence;
use crate::error::{Error, Result};

/// Per-feature bucket boundaries. A value `x` falls into the number of
/// boundaries `b ≤ x`, so a value equal to a boundary goes to the higher
/// bucket. Missing values map to the sentinel index `n_buckets`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketBoundaries {
    n_buckets: usize,
    boundaries: Vec<Vec<f64>>,
}

impl BucketBoundaries {
    /// Boundaries at the `j / n_buckets` quantiles (linear interpolation
    /// between order statistics) of each feature's observed training values.
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a GroupedSequence>, p: usize, n_buckets: usize) -> Result<Self> {
        if n_buckets < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 buckets, got {n_buckets}")));
        }
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); p];
        for seq in train {
            for t in 0..seq.len() {
                for (k, col) in columns.iter_mut().enumerate() {
                    if seq.observed(t, k) {
                        col.push(seq.u.get(t, k));
                    }
                }
            }
        }
        let mut boundaries = Vec::with_capacity(p);
        for (k, col) in columns.iter_mut().enumerate() {
            if col.is_empty() {
                return Err(Error::DegenerateFeature {
                    feature: k,
                    reason: "no observations to bucket".into(),
                });
            }
            col.sort_by(f64::total_cmp);
            boundaries.push((1..n_buckets).map(|j| quantile(col, j as f64 / n_buckets as f64)).collect());
        }
        Ok(Self { n_buckets, boundaries })
    }

    pub fn from_boundaries(n_buckets: usize, boundaries: Vec<Vec<f64>>) -> Result<Self> {
        if n_buckets < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 buckets, got {n_buckets}")));
        }
        for b in &boundaries {
            if b.len() != n_buckets - 1 || b.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::InvalidArgument("boundaries must be n_buckets - 1 sorted values".into()));
            }
        }
        Ok(Self { n_buckets, boundaries })
    }

    pub fn n_buckets(&self) -> usize {
        self.n_buckets
    }

    pub fn sentinel(&self) -> usize {
        self.n_buckets
    }

    pub fn p(&self) -> usize {
        self.boundaries.len()
    }

    pub fn boundaries(&self, feature: usize) -> &[f64] {
        &self.boundaries[feature]
    }

    pub fn bucket(&self, feature: usize, value: f64) -> usize {
        self.boundaries[feature].partition_point(|&b| b <= value)
    }

    /// `T × p` bucket indices, row-major; missing entries hold the sentinel.
    pub fn bucketize(&self, seq: &GroupedSequence) -> Result<Vec<usize>> {
        if seq.p() != self.p() {
            return Err(Error::dim("bucketize", self.p(), seq.p()));
        }
        let mut out = Vec::with_capacity(seq.len() * seq.p());
        for t in 0..seq.len() {
            for k in 0..seq.p() {
                out.push(if seq.observed(t, k) {
                    self.bucket(k, seq.u.get(t, k))
                } else {
                    self.sentinel()
                });
            }
        }
        Ok(out)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

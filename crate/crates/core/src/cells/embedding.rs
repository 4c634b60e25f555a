use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Per-feature bucket embeddings for the percentile baseline.
///
/// Each feature has an `(n_buckets + 1) × dim` table; the last row belongs to
/// the missing-value sentinel and stays zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub n_buckets: usize,
    pub dim: usize,
    pub indicators: bool,
    pub tables: Vec<Matrix>,
}

impl EmbeddingTable {
    pub fn zeros(p: usize, n_buckets: usize, dim: usize, indicators: bool) -> Self {
        Self {
            n_buckets,
            dim,
            indicators,
            tables: (0..p).map(|_| Matrix::zeros(n_buckets + 1, dim)).collect(),
        }
    }

    /// Random rows in `±1/√dim`, sentinel rows zero.
    pub fn init<R: Rng + ?Sized>(p: usize, n_buckets: usize, dim: usize, indicators: bool, rng: &mut R) -> Self {
        let limit = 1.0 / (dim as f64).sqrt();
        let mut table = Self::zeros(p, n_buckets, dim, indicators);
        for t in &mut table.tables {
            for b in 0..n_buckets {
                for v in t.row_mut(b) {
                    *v = rng.random_range(-limit..limit);
                }
            }
        }
        table
    }

    pub fn p(&self) -> usize {
        self.tables.len()
    }

    pub fn sentinel(&self) -> usize {
        self.n_buckets
    }

    /// Width of one embedded step: `p·dim`, plus `p` when indicators are on.
    pub fn output_size(&self) -> usize {
        self.p() * self.dim + if self.indicators { self.p() } else { 0 }
    }

    fn check(&self, indices: &[usize]) -> Result<()> {
        if indices.len() != self.p() {
            return Err(Error::dim("embed_input", self.p(), indices.len()));
        }
        if let Some(bad) = indices.iter().find(|&&i| i > self.n_buckets) {
            return Err(Error::InvalidArgument(format!(
                "bucket index {bad} outside 0..={}",
                self.n_buckets
            )));
        }
        Ok(())
    }

    /// Gradient of a loss with respect to the tables, given `∂L/∂input` rows.
    pub(crate) fn accumulate_grad(&self, indices: &[usize], d_input: &Matrix, grads: &mut EmbeddingTable) {
        let p = self.p();
        for t in 0..d_input.rows() {
            let row = d_input.row(t);
            for k in 0..p {
                let b = indices[t * p + k];
                if b == self.n_buckets {
                    continue;
                }
                for (g, d) in grads.tables[k].row_mut(b).iter_mut().zip(&row[k * self.dim..(k + 1) * self.dim]) {
                    *g += d;
                }
            }
        }
    }

    pub(crate) fn tensors(&self) -> Vec<(String, &[f64])> {
        self.tables
            .iter()
            .enumerate()
            .map(|(k, t)| (format!("embedding.{k}"), t.as_slice()))
            .collect()
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.tables.iter_mut().map(Matrix::as_mut_slice).collect()
    }

    /// 1 for trainable entries; the sentinel row is frozen.
    pub(crate) fn trainable_bits(&self) -> Vec<u8> {
        let mut bits = vec![1u8; (self.n_buckets + 1) * self.dim];
        bits[self.n_buckets * self.dim..].fill(0);
        bits
    }
}

/// Embeds one step: feature `k`'s bucket row fills slot `k`, and when the table
/// uses indicators the observation flags `v` are appended.
pub fn embed_input(table: &EmbeddingTable, indices: &[usize], v: Option<&[f64]>) -> Result<Vec<f64>> {
    table.check(indices)?;
    let p = table.p();
    let mut out = Vec::with_capacity(table.output_size());
    for (k, &b) in indices.iter().enumerate() {
        out.extend_from_slice(table.tables[k].row(b));
    }
    if table.indicators {
        let flags: Vec<f64> = match v {
            Some(v) if v.len() == p => v.to_vec(),
            Some(v) => return Err(Error::dim("embed_input indicators", p, v.len())),
            None => indices.iter().map(|&b| f64::from(u8::from(b != table.n_buckets))).collect(),
        };
        out.extend(flags);
    }
    Ok(out)
}

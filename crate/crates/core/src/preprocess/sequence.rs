//! Standardized, gap-aware sequences: the `(u, v, w)` feature groups fed to
//! the recurrent models.

use serde::{Deserialize, Serialize};

use super::window::WindowedSequence;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const DEFAULT_CLIP_LIMIT: f64 = 10.0;

/// Per-feature centring and scaling, fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub median: Vec<f64>,
    pub std: Vec<f64>,
    pub clip_limit: f64,
}

impl StandardizationStats {
    /// Median and standard deviation (about the mean, population form) of the
    /// windowed observations of each feature.
    ///
    /// Features with no observations or zero spread are rejected.
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a WindowedSequence>, p: usize, clip_limit: f64) -> Result<Self> {
        if !(clip_limit > 0.0) {
            return Err(Error::InvalidArgument(format!("clip limit must be positive, got {clip_limit}")));
        }
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); p];
        for seq in train {
            for row in &seq.values {
                for (k, v) in row.iter().enumerate() {
                    if let Some(v) = v {
                        columns[k].push(*v);
                    }
                }
            }
        }
        let mut median = Vec::with_capacity(p);
        let mut std = Vec::with_capacity(p);
        for (k, col) in columns.iter_mut().enumerate() {
            if col.is_empty() {
                return Err(Error::DegenerateFeature {
                    feature: k,
                    reason: "no observations in the training split".into(),
                });
            }
            col.sort_by(f64::total_cmp);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            let sd = var.sqrt();
            if !(sd > 0.0) {
                return Err(Error::DegenerateFeature {
                    feature: k,
                    reason: "zero variance in the training split".into(),
                });
            }
            median.push(sorted_median(col));
            std.push(sd);
        }
        Ok(Self { median, std, clip_limit })
    }

    /// Identity transform (median 0, std 1), useful for already-standardized data.
    pub fn identity(p: usize, clip_limit: f64) -> Self {
        Self {
            median: vec![0.0; p],
            std: vec![1.0; p],
            clip_limit,
        }
    }

    pub fn p(&self) -> usize {
        self.median.len()
    }

    #[inline]
    pub fn apply(&self, feature: usize, value: f64) -> f64 {
        let z = (value - self.median[feature]) / self.std[feature];
        z.clamp(-self.clip_limit, self.clip_limit)
    }
}

fn sorted_median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// How missing standardized values are filled before they reach a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillStrategy {
    Interpolate,
    Median,
}

/// Model-ready sequence. All matrices are `T × p`.
///
/// Until a fill strategy runs, `u` entries where `v = 0` are placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedSequence {
    pub entity_id: String,
    /// Step times as a fraction of the horizon; `s[0] = 0`.
    pub s: Vec<f64>,
    pub u: Matrix,
    pub v: Matrix,
    pub w: Matrix,
    /// Task targets in output form: `[y]` for binary, one-hot for classes.
    pub targets: Vec<f64>,
}

impl GroupedSequence {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn p(&self) -> usize {
        self.u.cols()
    }

    #[inline]
    pub fn observed(&self, t: usize, k: usize) -> bool {
        self.v.get(t, k) == 1.0
    }

    /// Checks the structural invariants: shapes agree, `v ∈ {0,1}`, `w ≥ 0`,
    /// `w` is zero at the first step and every step observes something.
    pub fn validate(&self) -> Result<()> {
        let (t, p) = self.u.shape();
        if self.v.shape() != (t, p) || self.w.shape() != (t, p) || self.s.len() != t {
            return Err(Error::dim("GroupedSequence", format!("{t}x{p}"), "inconsistent component shapes"));
        }
        if t == 0 {
            return Err(Error::EmptySequence);
        }
        for step in 0..t {
            if !self.v.row(step).iter().all(|&b| b == 0.0 || b == 1.0) {
                return Err(Error::InvalidArgument(format!("indicator at step {step} is not binary")));
            }
            if self.v.row(step).iter().all(|&b| b == 0.0) {
                return Err(Error::InvalidArgument(format!("step {step} observes no feature")));
            }
            if self.w.row(step).iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidArgument(format!("negative time delta at step {step}")));
            }
        }
        if self.w.row(0).iter().any(|&x| x != 0.0) {
            return Err(Error::InvalidArgument("time deltas must be zero at the first step".into()));
        }
        Ok(())
    }
}

/// Standardizes and clips observed values, sets indicators and normalized
/// step times. Missing entries get a placeholder of 0 and `w` is left at 0;
/// run [`compute_time_deltas`] and a fill afterwards.
pub fn standardize(seq: &WindowedSequence, stats: &StandardizationStats, targets: Vec<f64>) -> Result<GroupedSequence> {
    let t = seq.len();
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    let p = stats.p();
    let mut u = Matrix::zeros(t, p);
    let mut v = Matrix::zeros(t, p);
    for (step, row) in seq.values.iter().enumerate() {
        if row.len() != p {
            return Err(Error::dim("standardize", p, row.len()));
        }
        for (k, val) in row.iter().enumerate() {
            if let Some(x) = val {
                u.set(step, k, stats.apply(k, *x));
                v.set(step, k, 1.0);
            }
        }
    }
    Ok(GroupedSequence {
        entity_id: seq.entity_id.clone(),
        s: seq.times_normalized(),
        u,
        v,
        w: Matrix::zeros(t, p),
        targets,
    })
}

/// Time since each feature was last observed, accumulated across steps where
/// it was absent. `s` is already horizon-normalized, so `w ∈ [0, 1]`.
pub fn compute_time_deltas(mut seq: GroupedSequence) -> Result<GroupedSequence> {
    let t = seq.len();
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    for step in 1..t {
        if !(seq.s[step] > seq.s[step - 1]) {
            return Err(Error::Ordering(format!(
                "s[{}] = {} is not after s[{}] = {}",
                step,
                seq.s[step],
                step - 1,
                seq.s[step - 1]
            )));
        }
    }
    let p = seq.p();
    let mut w = Matrix::zeros(t, p);
    for step in 1..t {
        let gap = seq.s[step] - seq.s[step - 1];
        for k in 0..p {
            let carried = if seq.v.get(step - 1, k) == 0.0 {
                w.get(step - 1, k)
            } else {
                0.0
            };
            w.set(step, k, gap + carried);
        }
    }
    seq.w = w;
    Ok(seq)
}

/// Linear interpolation in time between the nearest observations of each
/// feature; carry forward after the last, backward before the first, and 0
/// for a feature never observed. Observed entries and `v` are untouched.
pub fn interpolate_missing(mut seq: GroupedSequence) -> GroupedSequence {
    let t = seq.len();
    for k in 0..seq.p() {
        let observed: Vec<usize> = (0..t).filter(|&step| seq.observed(step, k)).collect();
        if observed.is_empty() {
            for step in 0..t {
                seq.u.set(step, k, 0.0);
            }
            continue;
        }
        let mut next: usize = 0;
        for step in 0..t {
            if seq.observed(step, k) {
                next += 1;
                continue;
            }
            let value = match (next.checked_sub(1).map(|i| observed[i]), observed.get(next)) {
                (Some(a), Some(&b)) => {
                    let (v1, v2) = (seq.u.get(a, k), seq.u.get(b, k));
                    let (t1, t2) = (seq.s[a], seq.s[b]);
                    v1 + (v2 - v1) * (seq.s[step] - t1) / (t2 - t1)
                }
                (Some(a), None) => seq.u.get(a, k),
                (None, Some(&b)) => seq.u.get(b, k),
                (None, None) => unreachable!("feature has at least one observation"),
            };
            seq.u.set(step, k, value);
        }
    }
    seq
}

/// Missing standardized values become 0, the training median.
pub fn median_fill(mut seq: GroupedSequence) -> GroupedSequence {
    for step in 0..seq.len() {
        for k in 0..seq.p() {
            if !seq.observed(step, k) {
                seq.u.set(step, k, 0.0);
            }
        }
    }
    seq
}

pub fn fill(seq: GroupedSequence, strategy: FillStrategy) -> GroupedSequence {
    match strategy {
        FillStrategy::Interpolate => interpolate_missing(seq),
        FillStrategy::Median => median_fill(seq),
    }
}

/// Which components of each feature group enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLayout {
    pub indicators: bool,
    pub time_deltas: bool,
}

impl GroupLayout {
    pub const VALUES_AND_INDICATORS: GroupLayout = GroupLayout {
        indicators: true,
        time_deltas: false,
    };

    /// Components per feature group.
    pub fn components(&self) -> usize {
        1 + usize::from(self.indicators) + usize::from(self.time_deltas)
    }
}

/// Concatenates `(u, v, w)` per step. Component `j` of feature `k` lands at
/// index `j·p + k`, so all of feature `k` shares residue `k mod p`.
pub fn assemble_feature_groups(seq: &GroupedSequence, use_time_deltas: bool) -> Matrix {
    assemble(
        seq,
        GroupLayout {
            indicators: true,
            time_deltas: use_time_deltas,
        },
    )
}

pub fn assemble(seq: &GroupedSequence, layout: GroupLayout) -> Matrix {
    let p = seq.p();
    let c = layout.components();
    let mut x = Matrix::zeros(seq.len(), c * p);
    for step in 0..seq.len() {
        let row = x.row_mut(step);
        row[..p].copy_from_slice(seq.u.row(step));
        let mut block = 1;
        if layout.indicators {
            row[block * p..(block + 1) * p].copy_from_slice(seq.v.row(step));
            block += 1;
        }
        if layout.time_deltas {
            row[block * p..(block + 1) * p].copy_from_slice(seq.w.row(step));
        }
    }
    x
}

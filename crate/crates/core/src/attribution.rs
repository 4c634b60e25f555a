//! Integrated gradients against the population-median baseline.
//!
//! Standardization maps every feature's median to 0, so the baseline input
//! keeps the sequence's measurement pattern (indicators and deltas) and sets
//! all values to 0. Only the value components are scaled along the path.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{EncodedInput, EncodedSequence, EncodingConfig, Model, OutputActivation};
use crate::error::{Error, Result};
use crate::preprocess::{csv_err, format_float, GroupedSequence};
use crate::tensor::Matrix;

pub const DEFAULT_STEPS: usize = 50;

/// Right-endpoint Riemann approximation of the path integral from 0 to `x`:
/// `x_i/steps · Σ_{k=1..steps} ∂F(k·x/steps)/∂x_i`.
pub fn path_integral(x: &[f64], steps: usize, grad: impl Fn(&[f64]) -> Vec<f64> + Sync) -> Result<Vec<f64>> {
    if steps < 1 {
        return Err(Error::InvalidArgument("integrated gradients need at least 1 step".into()));
    }
    let grads: Vec<Vec<f64>> = (1..=steps)
        .into_par_iter()
        .map(|k| {
            let alpha = k as f64 / steps as f64;
            let point: Vec<f64> = x.iter().map(|v| v * alpha).collect();
            grad(&point)
        })
        .collect();
    let mut sum = vec![0.0; x.len()];
    for g in grads {
        sum.iter_mut().zip(g).for_each(|(s, v)| *s += v);
    }
    Ok(x.iter().zip(sum).map(|(xi, s)| xi * s / steps as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub entity_id: String,
    /// Normalized window times.
    pub times: Vec<f64>,
    /// `T × p` standardized model-input values (after filling).
    pub values: Matrix,
    /// `T × p` observation indicators.
    pub observed: Matrix,
    /// `T × p` attributions in probability units.
    pub attributions: Matrix,
    /// Output whose probability is attributed.
    pub output: usize,
    pub prediction: f64,
    pub baseline_prediction: f64,
}

impl AttributionMap {
    pub fn total(&self) -> f64 {
        self.attributions.as_slice().iter().sum()
    }

    /// One row per observed measurement, in time then feature order.
    pub fn rows(&self, feature_names: &[String]) -> Vec<AttributionRow> {
        let mut out = Vec::new();
        for t in 0..self.values.rows() {
            for k in 0..self.values.cols() {
                if self.observed.get(t, k) == 0.0 {
                    continue;
                }
                let a = self.attributions.get(t, k);
                out.push(AttributionRow {
                    feature: feature_names.get(k).cloned().unwrap_or_else(|| k.to_string()),
                    window_time: self.times[t],
                    value: self.values.get(t, k),
                    attribution: a,
                    sign: if a > 0.0 {
                        1
                    } else if a < 0.0 {
                        -1
                    } else {
                        0
                    },
                });
            }
        }
        out
    }
}

fn output_probability(activation: OutputActivation, logits: &[f64], output: usize) -> (f64, Vec<f64>) {
    let probs = activation.probabilities(logits);
    let f = probs[output];
    let d = match activation {
        OutputActivation::Sigmoid => (0..logits.len())
            .map(|j| if j == output { f * (1.0 - f) } else { 0.0 })
            .collect(),
        OutputActivation::Softmax => (0..logits.len())
            .map(|j| f * (f64::from(u8::from(j == output)) - probs[j]))
            .collect(),
    };
    (f, d)
}

/// Integrated gradients of output `output`'s probability with respect to the
/// value components of `seq`.
pub fn integrated_gradients_for(model: &Model, seq: &GroupedSequence, steps: usize, output: usize) -> Result<AttributionMap> {
    if !model.is_trained() {
        return Err(Error::InvalidArgument("integrated gradients need a trained model".into()));
    }
    if steps < 1 {
        return Err(Error::InvalidArgument("integrated gradients need at least 1 step".into()));
    }
    if !matches!(model.config.encoding, EncodingConfig::Grouped { .. }) {
        return Err(Error::InvalidArgument(
            "integrated gradients are defined for grouped inputs only".into(),
        ));
    }
    if output >= model.config.outputs {
        return Err(Error::dim("attributed output", model.config.outputs, output));
    }
    let encoded = model.encode(seq)?;
    let EncodedInput::Dense(x) = &encoded.input else {
        unreachable!("grouped encoding yields dense input")
    };
    let (t_len, p) = (x.rows(), model.config.p);
    let with_values = |alpha: f64| {
        let mut scaled = x.clone();
        for t in 0..t_len {
            scaled.row_mut(t)[..p].iter_mut().for_each(|v| *v *= alpha);
        }
        EncodedSequence {
            input: EncodedInput::Dense(scaled),
            ..encoded.clone()
        }
    };
    let probability = |e: &EncodedSequence| -> Result<f64> {
        let logits = model.logits(e)?;
        Ok(output_probability(model.config.activation, &logits, output).0)
    };
    let grad_at = |alpha: f64| -> Result<Matrix> {
        let e = with_values(alpha);
        let (logits, cache) = model.forward(&e)?;
        let (_, dz) = output_probability(model.config.activation, &logits, output);
        Ok(model.backward(&cache, &dz, true)?.1.expect("input gradient requested"))
    };
    let grads: Vec<Result<Matrix>> = (1..=steps)
        .into_par_iter()
        .map(|k| grad_at(k as f64 / steps as f64))
        .collect();
    let mut sum = Matrix::zeros(t_len, p);
    for g in grads {
        let g = g?;
        for t in 0..t_len {
            sum.row_mut(t).iter_mut().zip(&g.row(t)[..p]).for_each(|(s, v)| *s += v);
        }
    }
    let values = Matrix::from_fn(t_len, p, |t, k| x.get(t, k));
    let attributions = Matrix::from_fn(t_len, p, |t, k| values.get(t, k) * sum.get(t, k) / steps as f64);
    Ok(AttributionMap {
        entity_id: seq.entity_id.clone(),
        times: seq.s.clone(),
        observed: seq.v.clone(),
        values,
        attributions,
        output,
        prediction: probability(&encoded)?,
        baseline_prediction: probability(&with_values(0.0))?,
    })
}

/// Integrated gradients of the first output's probability.
pub fn integrated_gradients(model: &Model, seq: &GroupedSequence, steps: usize) -> Result<AttributionMap> {
    integrated_gradients_for(model, seq, steps, 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDivergence {
    pub feature: usize,
    pub total: f64,
    /// `|A_t − B_t|` per timestep.
    pub per_time: Vec<f64>,
}

/// Features ranked by `Σ_t |A_tk − B_tk|`, largest first; ties keep index
/// order.
pub fn top_divergent_features(a: &AttributionMap, b: &AttributionMap, k: usize) -> Result<Vec<FeatureDivergence>> {
    if a.attributions.shape() != b.attributions.shape() || a.times != b.times {
        return Err(Error::dim(
            "top_divergent_features grid",
            format!("{:?}", a.attributions.shape()),
            format!("{:?}", b.attributions.shape()),
        ));
    }
    let (t_len, p) = a.attributions.shape();
    let mut ranked: Vec<FeatureDivergence> = (0..p)
        .map(|f| {
            let per_time: Vec<f64> = (0..t_len)
                .map(|t| (a.attributions.get(t, f) - b.attributions.get(t, f)).abs())
                .collect();
            FeatureDivergence {
                feature: f,
                total: per_time.iter().sum(),
                per_time,
            }
        })
        .collect();
    ranked.sort_by(|x, y| y.total.total_cmp(&x.total));
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRow {
    pub feature: String,
    pub window_time: f64,
    pub value: f64,
    pub attribution: f64,
    pub sign: i8,
}

pub fn export_attributions(map: &AttributionMap, feature_names: &[String], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["feature", "window_time", "value", "attribution", "sign"])
        .map_err(csv_err)?;
    for r in map.rows(feature_names) {
        w.write_record([
            r.feature,
            format_float(r.window_time),
            format_float(r.value),
            format_float(r.attribution),
            r.sign.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_attributions(path: &Path) -> Result<Vec<AttributionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Per-feature divergence between two models' maps of the same sequence.
pub fn export_divergence(rows: &[FeatureDivergence], feature_names: &[String], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["rank", "feature", "total_divergence"]).map_err(csv_err)?;
    for (rank, d) in rows.iter().enumerate() {
        let name = feature_names.get(d.feature).cloned().unwrap_or_else(|| d.feature.to_string());
        w.write_record([(rank + 1).to_string(), name, format_float(d.total)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use crate::tensor::sigmoid;
    use rand::Rng;

    fn map(values: Vec<f64>, t: usize, p: usize) -> AttributionMap {
        AttributionMap {
            entity_id: "e".into(),
            times: (0..t).map(|i| i as f64).collect(),
            values: Matrix::zeros(t, p),
            observed: Matrix::from_fn(t, p, |_, _| 1.0),
            attributions: Matrix::from_vec(t, p, values).unwrap(),
            output: 0,
            prediction: 0.0,
            baseline_prediction: 0.0,
        }
    }

    #[test]
    fn logistic_path_integral_converges_to_closed_form() {
        let a = [0.8, -1.5, 0.4];
        let x = [1.2, 0.7, -2.0];
        let grad = |z: &[f64]| {
            let s = sigmoid(a.iter().zip(z).map(|(ai, zi)| ai * zi).sum());
            a.iter().map(|ai| ai * s * (1.0 - s)).collect::<Vec<f64>>()
        };
        let exact = sigmoid(a.iter().zip(&x).map(|(ai, xi)| ai * xi).sum()) - 0.5;
        let at50: f64 = path_integral(&x, 50, grad).unwrap().iter().sum();
        let at5000: f64 = path_integral(&x, 5000, grad).unwrap().iter().sum();
        assert!((at5000 - exact).abs() < (at50 - exact).abs());
        assert!((at5000 - exact).abs() < 1e-4);
        // Without an output nonlinearity the attribution is exactly a_i·x_i.
        let linear = path_integral(&x, 7, |_| a.to_vec()).unwrap();
        for i in 0..3 {
            assert!((linear[i] - a[i] * x[i]).abs() < 1e-15);
        }
        assert!(path_integral(&x, 0, grad).is_err());
    }

    #[test]
    fn divergence_ranking() {
        let a = map(vec![0.0; 6], 2, 3);
        let same = top_divergent_features(&a, &a, 3).unwrap();
        assert_eq!(same.iter().map(|d| d.feature).collect::<Vec<_>>(), vec![0, 1, 2]);

        let mut rng = SeedTree::new(5).stream("maps");
        for _ in 0..50 {
            let va: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let vb: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (ma, mb) = (map(va.clone(), 3, 4), map(vb.clone(), 3, 4));
            let got: Vec<usize> = top_divergent_features(&ma, &mb, 4).unwrap().iter().map(|d| d.feature).collect();
            let mut totals: Vec<(usize, f64)> = (0..4)
                .map(|f| (f, (0..3).map(|t| (va[t * 4 + f] - vb[t * 4 + f]).abs()).sum()))
                .collect();
            totals.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
            assert_eq!(got, totals.iter().map(|t| t.0).collect::<Vec<_>>());
        }
        let zero = map(vec![0.0; 12], 3, 4);
        let va = map((0..12).map(|i| if i % 4 == 2 { 5.0 } else { -0.1 }).collect(), 3, 4);
        assert_eq!(top_divergent_features(&va, &zero, 1).unwrap()[0].feature, 2);
        assert!(top_divergent_features(&va, &map(vec![0.0; 6], 2, 3), 1).is_err());
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let empty = map(vec![], 0, 2);
        export_attributions(&empty, &[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);

        let mut one = map(vec![0.25, -0.125], 1, 2);
        one.observed.set(0, 1, 0.0);
        let names = vec!["creatinine".to_string(), "lactate".to_string()];
        export_attributions(&one, &names, &path).unwrap();
        let rows = read_attributions(&path).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows, one.rows(&names));

        let mut rng = SeedTree::new(2).stream("rt");
        let full = map((0..20).map(|_| rng.random_range(-1.0..1.0) / 3.0).collect(), 5, 4);
        export_attributions(&full, &[], &path).unwrap();
        assert_eq!(read_attributions(&path).unwrap(), full.rows(&[]));
    }
}

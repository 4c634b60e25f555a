use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dropout::DropoutConfig;
use super::loss::loss_and_grad;
use super::optim::{clip_by_global_norm, Optimizer, OptimizerKind};
use crate::cells::{EncodedSequence, ForwardCache, Model, Params};
use crate::error::{Error, Result};
use crate::metrics::{au_prc, au_roc, macro_average, RunMetrics};
use crate::rng::SeedTree;

/// Gradients share the parameter container's layout.
pub type GradientSet = Params;

/// Sequences per fixed work unit; reduction order is by unit, so results do not
/// depend on the number of threads.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
    pub dropout: DropoutConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            clip_norm: 5.0,
            optimizer: OptimizerKind::Adam,
            dropout: DropoutConfig::default(),
            epochs: 10,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        self.dropout.validate()
    }
}

/// Exact gradients for one cached forward pass.
pub fn backward(model: &Model, cache: &ForwardCache, dlogits: &[f64]) -> Result<GradientSet> {
    Ok(model.backward(cache, dlogits, false)?.0)
}

/// Loss and gradients for one sequence in evaluation mode.
pub fn sequence_loss_and_grad(model: &Model, seq: &EncodedSequence) -> Result<(f64, GradientSet)> {
    let (logits, cache) = model.forward(seq)?;
    let (loss, dlogits) = loss_and_grad(&logits, &seq.targets, model.config.activation)?;
    Ok((loss, backward(model, &cache, &dlogits)?))
}

/// Mean loss and mean gradient over a batch, with per-sequence noise drawn
/// from `noise_seeds` (evaluation mode when `None`).
pub fn batch_gradient(
    model: &Model,
    batch: &[&EncodedSequence],
    dropout: &DropoutConfig,
    noise_seeds: Option<&SeedTree>,
) -> Result<(f64, GradientSet)> {
    let projection = model.params.head.projection_width();
    let partials: Vec<Result<(f64, GradientSet)>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grads = model.params.zeros_like();
            let mut total = 0.0;
            for (i, seq) in chunk.iter().enumerate() {
                let noise = match noise_seeds {
                    Some(tree) => {
                        let mut rng = tree.stream_indexed("sequence", (c * CHUNK + i) as u64);
                        dropout.sample(seq.len(), model.input_size(), model.hidden_size(), projection, &mut rng)
                    }
                    None => Default::default(),
                };
                let (logits, cache) = model.forward_with_noise(seq, noise)?;
                let (loss, dlogits) = loss_and_grad(&logits, &seq.targets, model.config.activation)?;
                model.backward_into(&cache, &dlogits, false, &mut grads)?;
                total += loss;
            }
            Ok((total, grads))
        })
        .collect();
    let mut grads = model.params.zeros_like();
    let mut total = 0.0;
    for part in partials {
        let (l, g) = part?;
        total += l;
        grads.add_assign(&g);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

/// Evaluation-mode probabilities for every sequence, in input order.
pub fn predict_all(model: &Model, seqs: &[EncodedSequence]) -> Result<Vec<Vec<f64>>> {
    seqs.par_iter().map(|s| model.predict(s)).collect()
}

/// AU-ROC and AU-PRC of predictions; multi-output tasks are macro-averaged
/// over outputs.
pub fn score_predictions(probs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<RunMetrics> {
    if probs.first().map_or(0, Vec::len) == 1 {
        let s: Vec<f64> = probs.iter().map(|p| p[0]).collect();
        let y: Vec<f64> = targets.iter().map(|t| t[0]).collect();
        return Ok(RunMetrics {
            au_roc: au_roc(&s, &y)?,
            au_prc: au_prc(&s, &y)?,
        });
    }
    Ok(RunMetrics {
        au_roc: macro_average(probs, targets, au_roc)?,
        au_prc: macro_average(probs, targets, au_prc)?,
    })
}

pub fn evaluate(model: &Model, seqs: &[EncodedSequence]) -> Result<RunMetrics> {
    let probs = predict_all(model, seqs)?;
    let targets: Vec<Vec<f64>> = seqs.iter().map(|s| s.targets.clone()).collect();
    score_predictions(&probs, &targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_au_roc: f64,
    pub valid_au_prc: f64,
    pub wall_seconds: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation AU-ROC seen.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Mini-batch training with validation-based model selection.
///
/// Every epoch reshuffles the training set from the seed, takes one optimizer
/// step per batch and then scores the validation set. `on_epoch` sees each
/// record together with the current best model.
pub fn train(
    model: Model,
    train_set: &[EncodedSequence],
    valid_set: &[EncodedSequence],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Model) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            model,
            history: Vec::new(),
            best_epoch: None,
        });
    }
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    let zeros = vec![0.0; model.config.outputs];
    for s in train_set.iter().chain(valid_set) {
        loss_and_grad(&zeros, &s.targets, model.config.activation)?;
    }
    let seeds = SeedTree::new(config.seed).child("train");
    let mut current = model;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &current);
    let mut best: Option<(f64, Model, usize)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut seeds.stream_indexed("shuffle", epoch as u64));
        let epoch_seeds = seeds.child_indexed("noise", epoch as u64);
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&EncodedSequence> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch_seeds = epoch_seeds.child_indexed("batch", b as u64);
            let (loss, mut grads) = batch_gradient(&current, &batch, &config.dropout, Some(&batch_seeds))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            clip_by_global_norm(&mut grads, config.clip_norm);
            optimizer.step(&mut current, &grads);
            loss_sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let metrics = evaluate(&current, valid_set)?;
        let improved = best.as_ref().is_none_or(|(score, _, _)| metrics.au_roc > *score);
        if improved {
            best = Some((metrics.au_roc, current.clone(), epoch));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / count as f64,
            valid_au_roc: metrics.au_roc,
            valid_au_prc: metrics.au_prc,
            wall_seconds: started.elapsed().as_secs_f64(),
            improved,
        };
        on_epoch(&record, &best.as_ref().expect("set on the first epoch").1)?;
        history.push(record);
    }
    let (_, model, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: Some(best_epoch),
    })
}

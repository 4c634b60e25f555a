use serde::{Deserialize, Serialize};

use crate::cells::{Model, Params};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adagrad,
    Adam,
}

/// Rescales `grads` so their joint L2 norm is at most `clip_norm`. Returns the
/// norm before clipping.
pub fn clip_by_global_norm(grads: &mut Params, clip_norm: f64) -> f64 {
    let norm = grads.norm_sq().sqrt();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    norm
}

/// One AdaGrad update; entries with `trainable[j] == 0` are left untouched.
pub fn adagrad_step(params: &mut [f64], grads: &[f64], accum: &mut [f64], lr: f64, trainable: Option<&[u8]>) {
    for j in 0..params.len() {
        if trainable.is_some_and(|t| t[j] == 0) {
            continue;
        }
        let g = grads[j];
        accum[j] += g * g;
        params[j] -= lr * g / (accum[j].sqrt() + EPSILON);
    }
}

/// One Adam update at (1-based) step `t`.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    trainable: Option<&[u8]>,
) {
    let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for j in 0..params.len() {
        if trainable.is_some_and(|mask| mask[j] == 0) {
            continue;
        }
        let g = grads[j];
        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
        params[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + EPSILON);
    }
}

/// Optimizer state for every tensor of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
    trainable: Vec<Option<Vec<u8>>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, model: &Model) -> Self {
        let shapes: Vec<usize> = model.params.tensors().iter().map(|(_, t)| t.len()).collect();
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Self {
            kind,
            learning_rate,
            first: zeros(),
            second: if kind == OptimizerKind::Adam { zeros() } else { Vec::new() },
            steps: 0,
            trainable: model.trainable_masks(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies `grads` to the model and bumps its step counter.
    pub fn step(&mut self, model: &mut Model, grads: &Params) {
        self.steps += 1;
        let lr = self.learning_rate;
        let t = self.steps;
        let grad_views = grads.tensors();
        for (idx, param) in model.params.tensors_mut().into_iter().enumerate() {
            let g = grad_views[idx].1;
            let mask = self.trainable[idx].as_deref();
            match self.kind {
                OptimizerKind::Adagrad => adagrad_step(param, g, &mut self.first[idx], lr, mask),
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.first[idx], &mut self.second[idx]);
                    adam_step(param, g, m, v, t, lr, mask)
                }
            }
        }
        model.optimizer_steps += 1;
    }
}

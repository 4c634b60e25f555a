use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputActivation {
    /// One independent sigmoid per output.
    Sigmoid,
    Softmax,
}

impl OutputActivation {
    pub fn probabilities(self, logits: &[f64]) -> Vec<f64> {
        match self {
            OutputActivation::Sigmoid => logits.iter().copied().map(sigmoid).collect(),
            OutputActivation::Softmax => softmax(logits),
        }
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn glorot<R: Rng + ?Sized>(outputs: usize, inputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (outputs + inputs) as f64).sqrt();
        Self {
            weight: Matrix::random_uniform(outputs, inputs, limit, rng),
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.bias.clone();
        self.weight.matvec_acc(x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grads` and returns `∂L/∂x`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Dense) -> Vec<f64> {
        grads.weight.add_outer(dy, x);
        for (g, d) in grads.bias.iter_mut().zip(dy) {
            *g += d;
        }
        let mut dx = vec![0.0; x.len()];
        self.weight.matvec_t_acc(dy, &mut dx);
        dx
    }
}

/// Readout from the final hidden state: an optional tanh layer, then a linear
/// output layer whose logits go through `activation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub hidden: Option<Dense>,
    pub output: Dense,
    pub activation: OutputActivation,
}

/// Intermediate values of one head evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadCache {
    /// Head input after readout dropout.
    pub input: Vec<f64>,
    /// tanh activations of the hidden layer, before projection dropout.
    pub hidden: Option<Vec<f64>>,
    /// Input of the output layer.
    pub projected: Vec<f64>,
}

impl ProjectionHead {
    /// `projection_size = 0` gives a direct linear readout.
    pub fn init<R: Rng + ?Sized>(
        inputs: usize,
        projection_size: usize,
        outputs: usize,
        activation: OutputActivation,
        rng: &mut R,
    ) -> Self {
        let (hidden, out_in) = if projection_size == 0 {
            (None, inputs)
        } else {
            (Some(Dense::glorot(projection_size, inputs, rng)), projection_size)
        };
        Self {
            hidden,
            output: Dense::glorot(outputs, out_in, rng),
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.as_ref().map(|d| Dense::zeros(d.weight.rows(), d.weight.cols())),
            output: Dense::zeros(self.output.weight.rows(), self.output.weight.cols()),
            activation: self.activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.hidden.as_ref().unwrap_or(&self.output).weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.output.bias.len()
    }

    /// Width of the output layer's input, where projection dropout applies.
    pub fn projection_width(&self) -> usize {
        self.output.weight.cols()
    }

    pub fn forward(&self, h: &[f64], readout: Option<&[f64]>, projection: Option<&[f64]>) -> Result<(Vec<f64>, HeadCache)> {
        if h.len() != self.inputs() {
            return Err(Error::dim("ProjectionHead::forward", self.inputs(), h.len()));
        }
        let input: Vec<f64> = match readout {
            Some(m) => h.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => h.to_vec(),
        };
        let hidden = self.hidden.as_ref().map(|d| {
            let mut a = d.forward(&input);
            a.iter_mut().for_each(|v| *v = v.tanh());
            a
        });
        let base = hidden.as_ref().unwrap_or(&input);
        let projected: Vec<f64> = match projection {
            Some(m) => base.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => base.clone(),
        };
        let logits = self.output.forward(&projected);
        Ok((logits, HeadCache { input, hidden, projected }))
    }

    /// Returns `∂L/∂h` for the head input before readout dropout.
    pub fn backward(
        &self,
        cache: &HeadCache,
        dlogits: &[f64],
        readout: Option<&[f64]>,
        projection: Option<&[f64]>,
        grads: &mut ProjectionHead,
    ) -> Vec<f64> {
        let mut d = self.output.backward(&cache.projected, dlogits, &mut grads.output);
        if let Some(m) = projection {
            d.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        if let (Some(layer), Some(act), Some(g)) = (&self.hidden, &cache.hidden, grads.hidden.as_mut()) {
            let dpre: Vec<f64> = d.iter().zip(act).map(|(dv, a)| dv * (1.0 - a * a)).collect();
            d = layer.backward(&cache.input, &dpre, g);
        }
        if let Some(m) = readout {
            d.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
        }
        d
    }

    pub(crate) fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        if let Some(h) = &self.hidden {
            out.push(("head.hidden.weight".to_string(), h.weight.as_slice()));
            out.push(("head.hidden.bias".to_string(), h.bias.as_slice()));
        }
        out.push(("head.output.weight".to_string(), self.output.weight.as_slice()));
        out.push(("head.output.bias".to_string(), self.output.bias.as_slice()));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(h) = &mut self.hidden {
            out.push(h.weight.as_mut_slice());
            out.push(h.bias.as_mut_slice());
        }
        out.push(self.output.weight.as_mut_slice());
        out.push(self.output.bias.as_mut_slice());
        out
    }
}

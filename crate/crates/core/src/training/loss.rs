use crate::cells::OutputActivation;
use crate::error::{Error, Result};
use crate::tensor::sigmoid;

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Cross-entropy of `logits` against `targets` and its gradient with respect
/// to the logits.
///
/// Sigmoid heads sum one binary cross-entropy per output; softmax heads take
/// one-hot targets.
pub fn loss_and_grad(logits: &[f64], targets: &[f64], activation: OutputActivation) -> Result<(f64, Vec<f64>)> {
    if logits.len() != targets.len() {
        return Err(Error::dim("loss", logits.len(), targets.len()));
    }
    match activation {
        OutputActivation::Sigmoid => {
            let mut total = 0.0;
            let mut grad = Vec::with_capacity(logits.len());
            for (&z, &y) in logits.iter().zip(targets) {
                if y != 0.0 && y != 1.0 {
                    return Err(Error::Label(format!("binary target must be 0 or 1, got {y}")));
                }
                // max(z, 0) − z·y + ln(1 + e^−|z|)
                total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                grad.push(sigmoid(z) - y);
            }
            Ok((total, grad))
        }
        OutputActivation::Softmax => {
            let ones = targets.iter().filter(|&&y| y == 1.0).count();
            let zeros = targets.iter().filter(|&&y| y == 0.0).count();
            if ones != 1 || ones + zeros != targets.len() {
                return Err(Error::Label("softmax targets must be one-hot".into()));
            }
            let class = targets.iter().position(|&y| y == 1.0).expect("checked above");
            let lse = log_sum_exp(logits);
            let grad = logits
                .iter()
                .zip(targets)
                .map(|(z, y)| (z - lse).exp() - y)
                .collect();
            Ok((lse - logits[class], grad))
        }
    }
}

pub fn loss(logits: &[f64], targets: &[f64], activation: OutputActivation) -> Result<f64> {
    Ok(loss_and_grad(logits, targets, activation)?.0)
}

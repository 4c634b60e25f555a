//! Losses, exact gradients, optimizers, dropout variants and the training loop.

mod dropout;
mod loss;
mod optim;
mod train;

pub use dropout::{apply_dropout, check_keep_prob, sample_mask, sample_zoneout, DropoutConfig, DropoutKind};
pub use loss::{loss, loss_and_grad};
pub use optim::{adagrad_step, adam_step, clip_by_global_norm, Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, EPSILON};
pub use train::{
    backward, batch_gradient, evaluate, predict_all, score_predictions, sequence_loss_and_grad, train, EpochRecord,
    GradientSet, TrainConfig, TrainOutcome,
};

//! Feature-grouped LSTM toolkit.
//!
//! An FG-LSTM is an LSTM whose input-to-hidden and hidden-to-hidden weights
//! are masked so that every hidden and cell unit reads exactly one feature
//! group. This crate carries the whole pipeline around it: event windowing
//! and imputation, the masked and dense recurrent cells, exact
//! backpropagation through time, optimizers and dropout variants, integrated
//! gradients, evaluation statistics and a synthetic cohort generator.

pub mod attribution;
pub mod cells;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorClass, Result};
pub use rng::SeedTree;
pub use tensor::{build_group_mask, masked_matmul, sigmoid, tanh, BinaryMask, Matrix};

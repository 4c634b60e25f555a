//! Flat TOML experiment configuration.
//!
//! Hyperparameter keys follow the tuning table's names in snake case
//! (`clip_norm`, `input_dropout_pk`, `rnn_hidden_size_per_feature_group`, ...).
//! Every key is optional; unknown keys are rejected.

use std::path::Path;

use fglstm_core::experiment::{ModelKind, ModelSpec};
use fglstm_core::preprocess::{BuildOptions, FillStrategy, SplitFractions, TaskKind, WindowConfig, DEFAULT_CLIP_LIMIT};
use fglstm_core::training::{DropoutConfig, OptimizerKind, TrainConfig};
use fglstm_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKindName {
    Binary,
    Multiclass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub task: String,
    pub task_kind: TaskKindName,
    /// Output count of a multiclass task.
    pub classes: usize,
    pub model: ModelKind,
    pub use_time_deltas: bool,
    pub use_indicators: bool,
    /// Fill strategy of the FG-LSTM input; the dense baselines fix their own.
    pub fill: FillStrategy,
    /// Softmax over classes rather than independent sigmoids.
    pub icd9_softmax: bool,
    /// Root seed. Run `r` of a multi-run command trains with `seed + r`.
    pub seed: u64,
    pub runs: usize,

    pub window_minutes: f64,
    pub horizon_hours: f64,
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub clip_limit: f64,

    pub rnn_hidden_size_per_feature_group: usize,
    pub rnn_hidden_size: usize,
    pub projection_layer_size: usize,
    pub percentile_embedding_size: usize,
    pub number_of_percentile_buckets: usize,

    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub input_dropout_pk: f64,
    pub rnn_hidden_dropout_pk: f64,
    pub projection_layer_dropout_pk: f64,
    pub variational_input_pk: f64,
    pub variational_output_pk: f64,
    pub variational_recurrent_pk: f64,
    pub zoneout_pk: f64,

    pub attribution_steps: usize,

    pub bench_batch: usize,
    pub bench_steps: usize,
    pub bench_repetitions: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let spec = ModelSpec::default();
        let train = TrainConfig::default();
        let drop = DropoutConfig::default();
        let split = SplitFractions::default();
        Self {
            task: "mortality".into(),
            task_kind: TaskKindName::Binary,
            classes: 20,
            model: ModelKind::FgLstm,
            use_time_deltas: false,
            use_indicators: true,
            fill: FillStrategy::Interpolate,
            icd9_softmax: true,
            seed: 0,
            runs: 5,
            window_minutes: 20.0,
            horizon_hours: 48.0,
            train_fraction: split.train,
            validation_fraction: split.validation,
            test_fraction: split.test,
            split_seed: 0,
            clip_limit: DEFAULT_CLIP_LIMIT,
            rnn_hidden_size_per_feature_group: spec.hidden_per_group,
            rnn_hidden_size: spec.hidden_size,
            projection_layer_size: spec.projection_size,
            percentile_embedding_size: spec.embedding_size,
            number_of_percentile_buckets: spec.n_buckets,
            optimizer: train.optimizer,
            learning_rate: train.learning_rate,
            clip_norm: train.clip_norm,
            epochs: train.epochs,
            batch_size: train.batch_size,
            input_dropout_pk: drop.input_dropout_pk,
            rnn_hidden_dropout_pk: drop.hidden_dropout_pk,
            projection_layer_dropout_pk: drop.projection_dropout_pk,
            variational_input_pk: drop.variational_input_pk,
            variational_output_pk: drop.variational_output_pk,
            variational_recurrent_pk: drop.variational_recurrent_pk,
            zoneout_pk: drop.zoneout_pk,
            attribution_steps: fglstm_core::attribution::DEFAULT_STEPS,
            bench_batch: 32,
            bench_steps: 20,
            bench_repetitions: 5,
        }
    }
}

/// Parses TOML into `T`, mapping syntax and unknown-key errors to config errors.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::config(origin, e.to_string().trim_end()))
}

pub fn read_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config(p.display().to_string(), format!("cannot read config: {e}")))?;
            parse_toml(&text, &p.display().to_string())
        }
    }
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Format(e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::config("runs", "need at least one run"));
        }
        let percentile = matches!(
            self.model,
            ModelKind::PercentileEmbedding | ModelKind::PercentileEmbeddingWithIndicator
        );
        if percentile && self.use_time_deltas {
            return Err(Error::config("use_time_deltas", "percentile embeddings take no time deltas"));
        }
        if self.model == ModelKind::FgLstm && self.rnn_hidden_size_per_feature_group == 0 {
            return Err(Error::config("rnn_hidden_size_per_feature_group", "must be positive"));
        }
        if self.model != ModelKind::FgLstm && !percentile && self.rnn_hidden_size == 0 {
            return Err(Error::config("rnn_hidden_size", "must be positive"));
        }
        if self.task_kind == TaskKindName::Multiclass && self.classes < 2 {
            return Err(Error::config("classes", "a multiclass task needs at least two classes"));
        }
        if !(self.window_minutes > 0.0) {
            return Err(Error::config("window_minutes", "must be positive"));
        }
        if !(self.horizon_hours > 0.0) {
            return Err(Error::config("horizon_hours", "must be positive"));
        }
        if self.attribution_steps == 0 {
            return Err(Error::config("attribution_steps", "must be positive"));
        }
        if self.bench_batch == 0 || self.bench_steps == 0 || self.bench_repetitions == 0 {
            return Err(Error::config("bench_batch", "benchmark sizes must be positive"));
        }
        self.split_fractions().validate()?;
        self.train_config(self.seed).validate()
    }

    pub fn task_kind(&self) -> TaskKind {
        match self.task_kind {
            TaskKindName::Binary => TaskKind::Binary,
            TaskKindName::Multiclass => TaskKind::MultiClass { classes: self.classes },
        }
    }

    fn split_fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.train_fraction,
            validation: self.validation_fraction,
            test: self.test_fraction,
        }
    }

    pub fn build_options(&self) -> BuildOptions {
        BuildOptions {
            window: WindowConfig {
                window_seconds: self.window_minutes * 60.0,
                horizon_seconds: self.horizon_hours * 3600.0,
            },
            fractions: self.split_fractions(),
            split_seed: self.split_seed,
            clip_limit: self.clip_limit,
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.model,
            hidden_per_group: self.rnn_hidden_size_per_feature_group,
            hidden_size: self.rnn_hidden_size,
            projection_size: self.projection_layer_size,
            n_buckets: self.number_of_percentile_buckets,
            embedding_size: self.percentile_embedding_size,
            indicators: self.use_indicators,
            time_deltas: self.use_time_deltas,
            fill: self.fill,
            softmax: self.icd9_softmax,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            optimizer: self.optimizer,
            dropout: DropoutConfig {
                input_dropout_pk: self.input_dropout_pk,
                hidden_dropout_pk: self.rnn_hidden_dropout_pk,
                projection_dropout_pk: self.projection_layer_dropout_pk,
                variational_input_pk: self.variational_input_pk,
                variational_output_pk: self.variational_output_pk,
                variational_recurrent_pk: self.variational_recurrent_pk,
                zoneout_pk: self.zoneout_pk,
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }

    /// Training seeds of the `runs` repetitions.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }
}

//! Model roster and the dataset → trained model → test metrics path shared by
//! the command line and the acceptance tests.

use serde::{Deserialize, Serialize};

use crate::cells::{
    Architecture, EncodedSequence, EncodingConfig, Model, ModelConfig, OutputActivation,
};
use crate::error::{Error, Result};
use crate::metrics::RunMetrics;
use crate::preprocess::{BucketBoundaries, Dataset, FillStrategy, GroupLayout, SplitPart, TaskKind};
use crate::rng::SeedTree;
use crate::training::{evaluate, train, EpochRecord, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    FgLstm,
    LstmMedian,
    LstmInterpolation,
    PercentileEmbedding,
    PercentileEmbeddingWithIndicator,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fg-lstm" => ModelKind::FgLstm,
            "lstm-median" => ModelKind::LstmMedian,
            "lstm-interpolation" => ModelKind::LstmInterpolation,
            "percentile-embedding" => ModelKind::PercentileEmbedding,
            "percentile-embedding-with-indicator" => ModelKind::PercentileEmbeddingWithIndicator,
            other => return Err(Error::config("model", format!("unknown model kind `{other}`"))),
        })
    }
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::FgLstm => "fg-lstm",
            ModelKind::LstmMedian => "lstm-median",
            ModelKind::LstmInterpolation => "lstm-interpolation",
            ModelKind::PercentileEmbedding => "percentile-embedding",
            ModelKind::PercentileEmbeddingWithIndicator => "percentile-embedding-with-indicator",
        }
    }
}

/// Roster name of a model configuration.
pub fn model_label(config: &ModelConfig) -> &'static str {
    match (config.architecture, config.encoding) {
        (Architecture::FgLstm, _) => ModelKind::FgLstm.name(),
        (_, EncodingConfig::Grouped { fill: FillStrategy::Median, .. }) => ModelKind::LstmMedian.name(),
        (_, EncodingConfig::Grouped { .. }) => ModelKind::LstmInterpolation.name(),
        (_, EncodingConfig::Percentile { indicators: false, .. }) => ModelKind::PercentileEmbedding.name(),
        (_, EncodingConfig::Percentile { .. }) => ModelKind::PercentileEmbeddingWithIndicator.name(),
    }
}

/// Architecture hyperparameters independent of the training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Hidden units per feature group (FG-LSTM).
    pub hidden_per_group: usize,
    /// Total hidden units (dense baselines).
    pub hidden_size: usize,
    pub projection_size: usize,
    pub n_buckets: usize,
    pub embedding_size: usize,
    pub indicators: bool,
    pub time_deltas: bool,
    pub fill: FillStrategy,
    pub softmax: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::FgLstm,
            hidden_per_group: 4,
            hidden_size: 32,
            projection_size: 0,
            n_buckets: 10,
            embedding_size: 4,
            indicators: true,
            time_deltas: false,
            fill: FillStrategy::Interpolate,
            softmax: true,
        }
    }
}

/// The four FG-LSTM rows of the ablation grid.
pub const ABLATION_ROWS: [&str; 4] = ["full", "w/o indicator", "w/o interpolation", "w/o indicator and w/o interpolation"];

impl ModelSpec {
    /// Variant of an FG-LSTM spec for one ablation row.
    pub fn ablation(self, row: &str) -> Result<Self> {
        let (indicators, fill) = match row {
            "full" => (true, FillStrategy::Interpolate),
            "w/o indicator" => (false, FillStrategy::Interpolate),
            "w/o interpolation" => (true, FillStrategy::Median),
            "w/o indicator and w/o interpolation" => (false, FillStrategy::Median),
            other => return Err(Error::config("ablation", format!("unknown row `{other}`"))),
        };
        Ok(Self {
            kind: ModelKind::FgLstm,
            indicators,
            fill,
            ..self
        })
    }

    pub fn model_config(&self, p: usize, task: TaskKind) -> ModelConfig {
        let outputs = task.outputs();
        let activation = if outputs > 1 && self.softmax {
            OutputActivation::Softmax
        } else {
            OutputActivation::Sigmoid
        };
        let grouped = |indicators: bool, fill: FillStrategy| EncodingConfig::Grouped {
            layout: GroupLayout {
                indicators,
                time_deltas: self.time_deltas,
            },
            fill,
        };
        let percentile = |indicators: bool| EncodingConfig::Percentile {
            n_buckets: self.n_buckets,
            dim: self.embedding_size,
            indicators,
        };
        let (architecture, hidden_size, encoding) = match self.kind {
            ModelKind::FgLstm => (
                Architecture::FgLstm,
                self.hidden_per_group * p,
                grouped(self.indicators, self.fill),
            ),
            ModelKind::LstmMedian => (Architecture::Lstm, self.hidden_size, grouped(self.indicators, FillStrategy::Median)),
            ModelKind::LstmInterpolation => (
                Architecture::Lstm,
                self.hidden_size,
                grouped(self.indicators, FillStrategy::Interpolate),
            ),
            ModelKind::PercentileEmbedding => (Architecture::Lstm, self.hidden_size, percentile(false)),
            ModelKind::PercentileEmbeddingWithIndicator => (Architecture::Lstm, self.hidden_size, percentile(true)),
        };
        ModelConfig {
            architecture,
            p,
            hidden_size,
            encoding,
            projection_size: self.projection_size,
            outputs,
            activation,
        }
    }

    /// A freshly initialized model carrying the dataset's statistics (and, for
    /// the embedding baselines, bucket boundaries fitted on its training part).
    pub fn build(&self, dataset: &Dataset, seed: u64) -> Result<Model> {
        let config = self.model_config(dataset.p(), dataset.task);
        let mut model = Model::new(config, &mut SeedTree::new(seed).stream("init"))?;
        model.stats = Some(dataset.stats.clone());
        if let EncodingConfig::Percentile { n_buckets, .. } = config.encoding {
            model.boundaries = Some(BucketBoundaries::fit(
                dataset.part(SplitPart::Train),
                dataset.p(),
                n_buckets,
            )?);
        }
        Ok(model)
    }
}

pub fn encode_part(model: &Model, dataset: &Dataset, split: SplitPart) -> Result<Vec<EncodedSequence>> {
    dataset.part(split).into_iter().map(|s| model.encode(s)).collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub outcome: TrainOutcome,
    pub test: RunMetrics,
}

/// Builds, trains and tests one model with training seed `config.seed`.
pub fn run_experiment(
    dataset: &Dataset,
    spec: &ModelSpec,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord, &Model) -> Result<()>,
) -> Result<ExperimentRun> {
    let model = spec.build(dataset, config.seed)?;
    let train_set = encode_part(&model, dataset, SplitPart::Train)?;
    let valid_set = encode_part(&model, dataset, SplitPart::Validation)?;
    let test_set = encode_part(&model, dataset, SplitPart::Test)?;
    let outcome = train(model, &train_set, &valid_set, config, on_epoch)?;
    let test = evaluate(&outcome.model, &test_set)?;
    Ok(ExperimentRun { outcome, test })
}

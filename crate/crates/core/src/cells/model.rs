use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embedding::{embed_input, EmbeddingTable};
use super::head::{HeadCache, OutputActivation, ProjectionHead};
use super::lstm::{CellParams, MaskSpec};
use super::recurrent::{backprop_recurrent, run_recurrent, RecurrentCache, SequenceNoise};
use crate::error::{Error, Result};
use crate::preprocess::{assemble, fill, BucketBoundaries, FillStrategy, GroupLayout, GroupedSequence, StandardizationStats};
use crate::tensor::Matrix;

pub const MODEL_FORMAT: &str = "fglstm-model/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    FgLstm,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncodingConfig {
    /// Filled values plus optional indicators and deltas, interleaved by group.
    Grouped { layout: GroupLayout, fill: FillStrategy },
    /// Per-feature percentile buckets looked up in trainable embeddings.
    Percentile {
        n_buckets: usize,
        dim: usize,
        indicators: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Number of features.
    pub p: usize,
    /// Total hidden size `H`; for the FG-LSTM this is `k·p`.
    pub hidden_size: usize,
    pub encoding: EncodingConfig,
    /// Width of the head's tanh layer; 0 reads out linearly.
    pub projection_size: usize,
    pub outputs: usize,
    pub activation: OutputActivation,
}

impl ModelConfig {
    /// FG-LSTM over the full grouped layout with `k` units per feature.
    pub fn fg_lstm(p: usize, k: usize, layout: GroupLayout, fill: FillStrategy) -> Self {
        Self {
            architecture: Architecture::FgLstm,
            p,
            hidden_size: k * p,
            encoding: EncodingConfig::Grouped { layout, fill },
            projection_size: 0,
            outputs: 1,
            activation: OutputActivation::Sigmoid,
        }
    }

    pub fn input_size(&self) -> usize {
        match self.encoding {
            EncodingConfig::Grouped { layout, .. } => layout.components() * self.p,
            EncodingConfig::Percentile { dim, indicators, .. } => self.p * dim + if indicators { self.p } else { 0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::config("p", "feature count must be positive"));
        }
        if self.hidden_size == 0 {
            return Err(Error::config("hidden_size", "must be positive"));
        }
        if self.outputs == 0 {
            return Err(Error::config("outputs", "must be positive"));
        }
        match (self.architecture, self.encoding) {
            (Architecture::FgLstm, EncodingConfig::Percentile { .. }) => {
                return Err(Error::config("model", "the FG-LSTM requires the grouped encoding"))
            }
            (Architecture::FgLstm, _) if self.hidden_size % self.p != 0 => {
                return Err(Error::config(
                    "rnn_hidden_size_per_feature_group",
                    format!("hidden size {} is not a multiple of p = {}", self.hidden_size, self.p),
                ))
            }
            (_, EncodingConfig::Percentile { n_buckets, dim, .. }) if n_buckets < 2 || dim == 0 => {
                return Err(Error::config(
                    "percentile_embedding_size",
                    "embedding needs at least 2 buckets and a positive size",
                ))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn mask_spec(&self) -> Result<Option<MaskSpec>> {
        match self.architecture {
            Architecture::FgLstm => {
                let c = self.input_size() / self.p;
                Ok(Some(MaskSpec::new(self.p, c, self.hidden_size / self.p)?))
            }
            Architecture::Lstm => Ok(None),
        }
    }
}

/// Every trainable tensor of a model. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub cell: CellParams,
    pub head: ProjectionHead,
    pub embedding: Option<EmbeddingTable>,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        Self {
            cell: CellParams::zeros(self.cell.hidden_size(), self.cell.input_size()),
            head: self.head.zeros_like(),
            embedding: self
                .embedding
                .as_ref()
                .map(|e| EmbeddingTable::zeros(e.p(), e.n_buckets, e.dim, e.indicators)),
        }
    }

    /// Named flat views in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = self.cell.tensors();
        out.extend(self.head.tensors());
        if let Some(e) = &self.embedding {
            out.extend(e.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.cell.tensors_mut();
        out.extend(self.head.tensors_mut());
        if let Some(e) = &mut self.embedding {
            out.extend(e.tensors_mut());
        }
        out
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, b) in dst.iter_mut().zip(src.1) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// A sequence turned into cell inputs for a particular model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub entity_id: String,
    pub input: EncodedInput,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncodedInput {
    /// `T × X` rows fed directly to the cell.
    Dense(Matrix),
    /// `T × p` bucket indices, row-major; embedded at every forward pass.
    Buckets { steps: usize, indices: Vec<usize> },
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        match &self.input {
            EncodedInput::Dense(x) => x.rows(),
            EncodedInput::Buckets { steps, .. } => *steps,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Identifies the model state a cache was produced from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheKey {
    pub optimizer_steps: u64,
    pub hidden: usize,
    pub input: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub key: CacheKey,
    pub recurrent: RecurrentCache,
    pub head: HeadCache,
    pub noise: SequenceNoise,
    buckets: Option<Vec<usize>>,
}

impl ForwardCache {
    pub fn final_hidden(&self) -> &[f64] {
        self.recurrent.h_last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format: String,
    pub config: ModelConfig,
    pub params: Params,
    /// Statistics the training data was standardized with.
    pub stats: Option<StandardizationStats>,
    pub boundaries: Option<BucketBoundaries>,
    /// Number of optimizer updates applied so far.
    pub optimizer_steps: u64,
    #[serde(skip)]
    masks: Option<MaskSpec>,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let masks = config.mask_spec()?;
        let (h, x) = (config.hidden_size, config.input_size());
        let cell = match &masks {
            Some(m) => CellParams::init_grouped(m, rng),
            None => CellParams::init_dense(h, x, rng),
        };
        let head = ProjectionHead::init(h, config.projection_size, config.outputs, config.activation, rng);
        let embedding = match config.encoding {
            EncodingConfig::Percentile {
                n_buckets,
                dim,
                indicators,
            } => Some(EmbeddingTable::init(config.p, n_buckets, dim, indicators, rng)),
            EncodingConfig::Grouped { .. } => None,
        };
        Ok(Self {
            format: MODEL_FORMAT.into(),
            config,
            params: Params { cell, head, embedding },
            stats: None,
            boundaries: None,
            optimizer_steps: 0,
            masks,
        })
    }

    /// Builds a model around existing parameters, checking every shape.
    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        let mut model = Self {
            format: MODEL_FORMAT.into(),
            config,
            params,
            stats: None,
            boundaries: None,
            optimizer_steps: 0,
            masks: None,
        };
        model.finish_load()?;
        Ok(model)
    }

    fn finish_load(&mut self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Format(format!(
                "model format `{}` is not supported (expected `{MODEL_FORMAT}`)",
                self.format
            )));
        }
        self.config.validate()?;
        self.masks = self.config.mask_spec()?;
        self.params
            .cell
            .check_shapes(self.config.hidden_size, self.config.input_size())?;
        let head = &self.params.head;
        if head.inputs() != self.config.hidden_size || head.outputs() != self.config.outputs {
            return Err(Error::dim(
                "Model head",
                format!("{}→{}", self.config.hidden_size, self.config.outputs),
                format!("{}→{}", head.inputs(), head.outputs()),
            ));
        }
        if let EncodingConfig::Percentile { n_buckets, dim, .. } = self.config.encoding {
            match &self.params.embedding {
                Some(e) if e.p() == self.config.p && e.n_buckets == n_buckets && e.dim == dim => {}
                _ => return Err(Error::Format("embedding table does not match the model config".into())),
            }
        }
        if !self.params.is_finite() {
            return Err(Error::Format("model parameters are not finite".into()));
        }
        Ok(())
    }

    pub fn masks(&self) -> Option<&MaskSpec> {
        self.masks.as_ref()
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size()
    }

    pub fn is_trained(&self) -> bool {
        self.optimizer_steps > 0
    }

    /// 0/1 per entry of each tensor in [`Params::tensors`] order; `None` means
    /// all entries are trainable.
    pub fn trainable_masks(&self) -> Vec<Option<Vec<u8>>> {
        let mut out: Vec<Option<Vec<u8>>> = Vec::new();
        for _ in 0..4 {
            out.push(self.masks.as_ref().map(|m| m.input.bits().to_vec()));
        }
        for _ in 0..4 {
            out.push(self.masks.as_ref().map(|m| m.recurrent.bits().to_vec()));
        }
        out.extend((0..4).map(|_| None));
        out.extend(self.params.head.tensors().iter().map(|_| None));
        if let Some(e) = &self.params.embedding {
            out.extend((0..e.p()).map(|_| Some(e.trainable_bits())));
        }
        out
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey {
            optimizer_steps: self.optimizer_steps,
            hidden: self.config.hidden_size,
            input: self.config.input_size(),
            outputs: self.config.outputs,
        }
    }

    /// Applies the model's fill and layout (or bucketing) to a sequence.
    pub fn encode(&self, seq: &GroupedSequence) -> Result<EncodedSequence> {
        if seq.p() != self.config.p {
            return Err(Error::dim("Model::encode features", self.config.p, seq.p()));
        }
        if seq.is_empty() {
            return Err(Error::EmptySequence);
        }
        let input = match self.config.encoding {
            EncodingConfig::Grouped { layout, fill: strategy } => {
                EncodedInput::Dense(assemble(&fill(seq.clone(), strategy), layout))
            }
            EncodingConfig::Percentile { .. } => {
                let boundaries = self
                    .boundaries
                    .as_ref()
                    .ok_or_else(|| Error::config("boundaries", "percentile model has no fitted bucket boundaries"))?;
                EncodedInput::Buckets {
                    steps: seq.len(),
                    indices: boundaries.bucketize(seq)?,
                }
            }
        };
        Ok(EncodedSequence {
            entity_id: seq.entity_id.clone(),
            input,
            targets: seq.targets.clone(),
        })
    }

    fn cell_input(&self, enc: &EncodedSequence) -> Result<Matrix> {
        match &enc.input {
            EncodedInput::Dense(x) => {
                if x.cols() != self.config.input_size() {
                    return Err(Error::dim("Model input width", self.config.input_size(), x.cols()));
                }
                Ok(x.clone())
            }
            EncodedInput::Buckets { steps, indices } => {
                let table = self
                    .params
                    .embedding
                    .as_ref()
                    .ok_or_else(|| Error::Format("bucketed input for a model without embeddings".into()))?;
                let p = self.config.p;
                if indices.len() != steps * p {
                    return Err(Error::dim("bucket indices", steps * p, indices.len()));
                }
                let mut data = Vec::with_capacity(steps * table.output_size());
                for t in 0..*steps {
                    data.extend(embed_input(table, &indices[t * p..(t + 1) * p], None)?);
                }
                Matrix::from_vec(*steps, table.output_size(), data)
            }
        }
    }

    /// Forward pass with explicit dropout noise; returns logits and the cache.
    pub fn forward_with_noise(&self, enc: &EncodedSequence, noise: SequenceNoise) -> Result<(Vec<f64>, ForwardCache)> {
        if enc.is_empty() {
            return Err(Error::EmptySequence);
        }
        let x = self.cell_input(enc)?;
        let recurrent = run_recurrent(&self.params.cell, self.masks.as_ref(), &x, &noise);
        let (logits, head) =
            self.params
                .head
                .forward(recurrent.h_last(), noise.readout.as_deref(), noise.projection.as_deref())?;
        let buckets = match &enc.input {
            EncodedInput::Buckets { indices, .. } => Some(indices.clone()),
            EncodedInput::Dense(_) => None,
        };
        Ok((
            logits,
            ForwardCache {
                key: self.cache_key(),
                recurrent,
                head,
                noise,
                buckets,
            },
        ))
    }

    /// Evaluation-mode forward pass.
    pub fn forward(&self, enc: &EncodedSequence) -> Result<(Vec<f64>, ForwardCache)> {
        self.forward_with_noise(enc, SequenceNoise::default())
    }

    pub fn logits(&self, enc: &EncodedSequence) -> Result<Vec<f64>> {
        Ok(self.forward(enc)?.0)
    }

    /// Output probabilities in evaluation mode.
    pub fn predict(&self, enc: &EncodedSequence) -> Result<Vec<f64>> {
        Ok(self.config.activation.probabilities(&self.logits(enc)?))
    }

    /// Gradients of a loss with `∂L/∂logits = dlogits`; optionally also
    /// `∂L/∂x` for the cell input rows.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64], input_grad: bool) -> Result<(Params, Option<Matrix>)> {
        let mut grads = self.params.zeros_like();
        let dx = self.backward_into(cache, dlogits, input_grad, &mut grads)?;
        Ok((grads, dx))
    }

    /// Like [`Model::backward`] but accumulates into existing gradients.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        dlogits: &[f64],
        input_grad: bool,
        grads: &mut Params,
    ) -> Result<Option<Matrix>> {
        if cache.key != self.cache_key() {
            return Err(Error::StaleCache(format!("{:?} vs {:?}", cache.key, self.cache_key())));
        }
        if dlogits.len() != self.config.outputs {
            return Err(Error::dim("Model::backward logits", self.config.outputs, dlogits.len()));
        }
        let noise = &cache.noise;
        let dh = self.params.head.backward(
            &cache.head,
            dlogits,
            noise.readout.as_deref(),
            noise.projection.as_deref(),
            &mut grads.head,
        );
        let need_dx = input_grad || cache.buckets.is_some();
        let mut dx = need_dx.then(|| Matrix::zeros(cache.recurrent.steps, cache.recurrent.input));
        backprop_recurrent(
            &self.params.cell,
            self.masks.as_ref(),
            &cache.recurrent,
            noise,
            &dh,
            &mut grads.cell,
            dx.as_mut(),
        );
        if let (Some(indices), Some(table), Some(g), Some(dx)) = (
            &cache.buckets,
            &self.params.embedding,
            grads.embedding.as_mut(),
            dx.as_ref(),
        ) {
            table.accumulate_grad(indices, dx, g);
        }
        Ok(if input_grad { dx } else { None })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut model: Model = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        model.finish_load()?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut model: Model = serde_json::from_str(text)?;
        model.finish_load()?;
        Ok(model)
    }
}

/// Evaluation-mode logits and cache for one preprocessed sequence.
pub fn forward_sequence(model: &Model, seq: &GroupedSequence) -> Result<(Vec<f64>, ForwardCache)> {
    model.forward(&model.encode(seq)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::compute_time_deltas;
    use crate::rng::SeedTree;

    pub(crate) fn random_sequence(p: usize, t: usize, seed: u64) -> GroupedSequence {
        let mut rng = SeedTree::new(seed).stream("seq");
        let s: Vec<f64> = (0..t).map(|i| i as f64 * 0.01 + 0.001 * rng.random::<f64>()).collect();
        let v = Matrix::from_fn(t, p, |_, _| f64::from(u8::from(rng.random::<f64>() < 0.6)));
        let u = Matrix::from_fn(t, p, |i, k| if v.get(i, k) == 1.0 { rng.random_range(-2.0..2.0) } else { 0.0 });
        compute_time_deltas(GroupedSequence {
            entity_id: format!("e{seed}"),
            s,
            u,
            v,
            w: Matrix::zeros(t, p),
            targets: vec![f64::from(u8::from(seed % 2 == 0))],
        })
        .unwrap()
    }

    fn fg(p: usize, k: usize, seed: u64) -> Model {
        let cfg = ModelConfig::fg_lstm(p, k, GroupLayout::VALUES_AND_INDICATORS, FillStrategy::Interpolate);
        Model::new(cfg, &mut SeedTree::new(seed).stream("model")).unwrap()
    }

    #[test]
    fn single_step_is_cell_plus_head() {
        let model = fg(2, 2, 1);
        let seq = random_sequence(2, 1, 4);
        let enc = model.encode(&seq).unwrap();
        let (logits, _) = model.forward(&enc).unwrap();
        let EncodedInput::Dense(x) = &enc.input else { unreachable!() };
        let (h, _) =
            super::super::lstm::fg_lstm_step(&model.params.cell, model.masks().unwrap(), x.row(0), &[0.0; 4], &[0.0; 4])
                .unwrap();
        let (z, _) = model.params.head.forward(&h, None, None).unwrap();
        assert_eq!(logits, z);
    }

    #[test]
    fn repeated_input_changes_state() {
        let model = fg(2, 3, 2);
        let seq = random_sequence(2, 1, 5);
        let enc = model.encode(&seq).unwrap();
        let EncodedInput::Dense(x) = &enc.input else { unreachable!() };
        let doubled = EncodedSequence {
            input: EncodedInput::Dense(Matrix::from_fn(2, x.cols(), |_, j| x.get(0, j))),
            ..enc.clone()
        };
        let a = model.forward(&enc).unwrap().1;
        let b = model.forward(&doubled).unwrap().1;
        assert_ne!(a.final_hidden(), b.final_hidden());
    }

    #[test]
    fn feature_permutation_leaves_logits_unchanged() {
        let (p, k) = (3, 2);
        let model = fg(p, k, 3);
        let seq = random_sequence(p, 6, 6);
        let perm = [2usize, 0, 1];
        let mut permuted_seq = seq.clone();
        for t in 0..seq.len() {
            for (new, &old) in perm.iter().enumerate() {
                permuted_seq.u.set(t, new, seq.u.get(t, old));
                permuted_seq.v.set(t, new, seq.v.get(t, old));
                permuted_seq.w.set(t, new, seq.w.get(t, old));
            }
        }
        // Index `g + r·p` of the permuted model holds group `perm[g]`'s unit `r`.
        let remap = |i: usize| perm[i % p] + (i / p) * p;
        let mut permuted = model.clone();
        let cell = &model.params.cell;
        for g in 0..4 {
            permuted.params.cell.w[g] = Matrix::from_fn(k * p, 2 * p, |i, j| cell.w[g].get(remap(i), remap(j)));
            permuted.params.cell.u[g] = Matrix::from_fn(k * p, k * p, |i, j| cell.u[g].get(remap(i), remap(j)));
            permuted.params.cell.b[g] = (0..k * p).map(|i| cell.b[g][remap(i)]).collect();
        }
        let out = &model.params.head.output;
        permuted.params.head.output.weight = Matrix::from_fn(1, k * p, |_, j| out.weight.get(0, remap(j)));
        let a = forward_sequence(&model, &seq).unwrap().0;
        let b = forward_sequence(&permuted, &permuted_seq).unwrap().0;
        assert!((a[0] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn round_trip_and_stale_cache() {
        let mut model = fg(3, 2, 7);
        let json = model.to_json().unwrap();
        let back = Model::from_json(&json).unwrap();
        assert_eq!(back, model);
        assert!(back.masks().is_some());

        let enc = model.encode(&random_sequence(3, 4, 1)).unwrap();
        let (_, cache) = model.forward(&enc).unwrap();
        model.optimizer_steps += 1;
        assert!(matches!(model.backward(&cache, &[1.0], false), Err(Error::StaleCache(_))));

        let mut bad: serde_json::Value = serde_json::from_str(&json).unwrap();
        bad["format"] = "fglstm-model/0".into();
        assert!(matches!(Model::from_json(&bad.to_string()), Err(Error::Format(_))));
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ModelConfig::fg_lstm(3, 2, GroupLayout::VALUES_AND_INDICATORS, FillStrategy::Median);
        cfg.hidden_size = 7;
        assert!(cfg.validate().is_err());
        cfg.hidden_size = 6;
        cfg.encoding = EncodingConfig::Percentile {
            n_buckets: 4,
            dim: 2,
            indicators: true,
        };
        assert!(cfg.validate().is_err());
        cfg.architecture = Architecture::Lstm;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn empty_sequence_rejected() {
        let model = fg(2, 1, 1);
        let mut seq = random_sequence(2, 1, 1);
        seq.s.clear();
        seq.u = Matrix::zeros(0, 2);
        seq.v = Matrix::zeros(0, 2);
        seq.w = Matrix::zeros(0, 2);
        assert!(matches!(model.encode(&seq), Err(Error::EmptySequence)));
    }
}

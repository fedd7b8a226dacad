//! Fine-tuning a transformer encoder with a softmax classification head on
//! the CLS representation.
//!
//! Pretrained checkpoints are opaque [`Encoder`] values (weights plus
//! vocabulary). Toy encoders are small randomly initialized networks whose
//! vocabulary is built from the corpus at hand; they stand in for the large
//! checkpoints in tests and desk-scale runs.

mod adam;
pub mod network;
pub mod tokenizer;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelSchema, LabeledDataset, Post};
use crate::probs::ProbabilityMatrix;
use crate::rng::{fnv1a, seeded, shuffle};
use adam::Adam;
use network::{init_encoder, init_head, Layout, Network, NetworkConfig};
use tokenizer::Vocab;

pub const DEFAULT_MAX_TOKENS: usize = 512;
pub const MIN_MAX_TOKENS: usize = 8;

pub const PAPER_BATCH_SIZES: [usize; 3] = [8, 16, 32];
pub const PAPER_LEARNING_RATES: [f64; 4] = [1e-3, 1e-4, 5e-5, 1e-5];
pub const PAPER_EPOCHS: [usize; 3] = [5, 10, 15];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncoderError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("text is empty")]
    EmptyText,
    #[error("no posts to score")]
    EmptyInput,
    #[error("training loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("encoder {0:?} is not available")]
    EncoderUnavailable(String),
    #[error("schema mismatch: head has {head} outputs but data has {data} levels; align labels first")]
    SchemaMismatch { head: usize, data: usize },
    #[error("invalid encoder weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderFamily {
    General,
    Mental,
    Tweet,
    Toy,
}

/// A named pretrained encoder + tokenizer checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderRef {
    pub registry_name: String,
    pub family: EncoderFamily,
}

/// Short model ids, their checkpoint names and families.
pub const REGISTRY: [(&str, &str, EncoderFamily); 4] = [
    ("bert", "bert-base-cased", EncoderFamily::General),
    ("roberta", "roberta-base", EncoderFamily::General),
    ("mentalbert", "mental/mental-bert-base-uncased", EncoderFamily::Mental),
    ("bertweet", "vinai/bertweet-base", EncoderFamily::Tweet),
];

impl EncoderRef {
    /// Accepts a short id (`roberta`), a registry name (`roberta-base`) or
    /// any `toy...` name.
    pub fn resolve(name: &str) -> Result<Self, EncoderError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(EncoderError::EncoderUnavailable(name.to_string()));
        }
        if name.starts_with("toy") {
            return Ok(Self { registry_name: name.to_string(), family: EncoderFamily::Toy });
        }
        REGISTRY
            .iter()
            .find(|(id, reg, _)| name.eq_ignore_ascii_case(id) || name == *reg)
            .map(|&(_, reg, family)| Self { registry_name: reg.to_string(), family })
            .ok_or_else(|| EncoderError::EncoderUnavailable(name.to_string()))
    }

    /// Short id for registry entries, the registry name otherwise.
    pub fn model_id(&self) -> &str {
        REGISTRY.iter().find(|(_, reg, _)| *reg == self.registry_name).map_or(self.registry_name.as_str(), |(id, _, _)| id)
    }

    /// Table label, e.g. `RoBERTa`.
    pub fn display_name(&self) -> String {
        match self.model_id() {
            "bert" => "BERT".into(),
            "roberta" => "RoBERTa".into(),
            "mentalbert" => "mentalBERT".into(),
            "bertweet" => "BERTweet".into(),
            other => other.to_string(),
        }
    }
}

impl fmt::Display for EncoderRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.registry_name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub num_epochs: usize,
    pub seed: u64,
    pub max_tokens: usize,
}

impl HyperParams {
    pub fn new(batch_size: usize, learning_rate: f64, num_epochs: usize, seed: u64) -> Self {
        Self { batch_size, learning_rate, num_epochs, seed, max_tokens: DEFAULT_MAX_TOKENS }
    }

    /// In paper-faithful mode batch size, learning rate and epochs must come
    /// from the published search sets.
    pub fn validate(&self, paper_faithful: bool) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidHyperParams(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.num_epochs == 0 {
            return bad("num_epochs must be positive".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.max_tokens < MIN_MAX_TOKENS {
            return bad(format!("max_tokens must be at least {MIN_MAX_TOKENS}, got {}", self.max_tokens));
        }
        if paper_faithful {
            if !PAPER_BATCH_SIZES.contains(&self.batch_size) {
                return bad(format!("batch_size {} not in {PAPER_BATCH_SIZES:?}", self.batch_size));
            }
            if !PAPER_LEARNING_RATES.contains(&self.learning_rate) {
                return bad(format!("learning_rate {} not in {PAPER_LEARNING_RATES:?}", self.learning_rate));
            }
            if !PAPER_EPOCHS.contains(&self.num_epochs) {
                return bad(format!("num_epochs {} not in {PAPER_EPOCHS:?}", self.num_epochs));
            }
        }
        Ok(())
    }
}

/// Architecture and initialization of toy encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub max_positions: usize,
    pub init_std: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { hidden: 32, heads: 2, layers: 2, ffn: 128, max_positions: DEFAULT_MAX_TOKENS, init_std: 0.1 }
    }
}

/// Standard deviation used to initialize new classification heads.
const HEAD_INIT_STD: f64 = 0.02;

/// Pretrained encoder weights and tokenizer, without a task head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    reference: EncoderRef,
    config: NetworkConfig,
    vocab: Vocab,
    weights: Vec<f64>,
}

impl Encoder {
    pub fn from_parts(reference: EncoderRef, config: NetworkConfig, vocab: Vocab, weights: Vec<f64>) -> Result<Self, EncoderError> {
        if !config.is_valid() || config.vocab_size != vocab.len() {
            return Err(EncoderError::InvalidWeights(format!("inconsistent config {config:?} for vocabulary of {}", vocab.len())));
        }
        let expected = Layout::new(&config, 0).encoder_len();
        if weights.len() != expected {
            return Err(EncoderError::InvalidWeights(format!("expected {expected} weights, got {}", weights.len())));
        }
        Ok(Self { reference, config, vocab, weights })
    }

    /// Randomly initialized encoder over the vocabulary of `texts`. The
    /// initialization depends only on the registry name and vocabulary.
    pub fn toy<'a>(reference: EncoderRef, texts: impl IntoIterator<Item = &'a str>, toy: &ToyConfig) -> Self {
        let vocab = Vocab::build(texts);
        let config = NetworkConfig {
            vocab_size: vocab.len(),
            hidden: toy.hidden,
            heads: toy.heads,
            ffn: toy.ffn,
            layers: toy.layers,
            max_positions: toy.max_positions,
        };
        let mut rng = seeded(fnv1a(reference.registry_name.as_bytes()), "toy-encoder");
        let weights = init_encoder(&config, toy.init_std, &mut rng);
        Self { reference, config, vocab, weights }
    }

    pub fn reference(&self) -> &EncoderRef {
        &self.reference
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Token ids for `text`, truncated to `max_tokens` (and to the
    /// encoder's position limit) including the boundary tokens.
    pub fn tokenize_truncate(&self, text: &str, max_tokens: usize) -> Result<Vec<u32>, EncoderError> {
        tokenize_truncate(&self.vocab, self.config.max_positions, text, max_tokens)
    }
}

fn tokenize_truncate(vocab: &Vocab, max_positions: usize, text: &str, max_tokens: usize) -> Result<Vec<u32>, EncoderError> {
    if max_tokens < MIN_MAX_TOKENS {
        return Err(EncoderError::InvalidHyperParams(format!("max_tokens must be at least {MIN_MAX_TOKENS}")));
    }
    if text.trim().is_empty() {
        return Err(EncoderError::EmptyText);
    }
    Ok(vocab.encode(text, max_tokens.min(max_positions)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// One fine-tuning pass: which dataset and with which settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStage {
    pub dataset: String,
    pub hyperparams: HyperParams,
    pub log: Vec<EpochLoss>,
}

/// Encoder plus classification head after fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    encoder: EncoderRef,
    config: NetworkConfig,
    vocab: Vocab,
    schema: LabelSchema,
    params: Vec<f64>,
    stages: Vec<TrainingStage>,
}

impl ClassifierModel {
    /// Reassembles a saved model, checking the parameter count.
    pub fn from_parts(
        encoder: EncoderRef,
        config: NetworkConfig,
        vocab: Vocab,
        schema: LabelSchema,
        params: Vec<f64>,
        stages: Vec<TrainingStage>,
    ) -> Result<Self, EncoderError> {
        let expected = Layout::new(&config, schema.len()).total();
        if params.len() != expected || config.vocab_size != vocab.len() || !config.is_valid() {
            return Err(EncoderError::InvalidWeights(format!("expected {expected} parameters, got {}", params.len())));
        }
        Ok(Self { encoder, config, vocab, schema, params, stages })
    }

    pub fn encoder(&self) -> &EncoderRef {
        &self.encoder
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn head_width(&self) -> usize {
        self.schema.len()
    }

    pub fn stages(&self) -> &[TrainingStage] {
        &self.stages
    }

    /// Datasets the model was fine-tuned on, in order.
    pub fn lineage(&self) -> Vec<String> {
        self.stages.iter().map(|s| s.dataset.clone()).collect()
    }

    /// Per-epoch losses across all stages, epochs numbered from 1 within each stage.
    pub fn training_log(&self) -> Vec<EpochLoss> {
        self.stages.iter().flat_map(|s| s.log.iter().copied()).collect()
    }

    pub fn tokenize_truncate(&self, text: &str, max_tokens: usize) -> Result<Vec<u32>, EncoderError> {
        tokenize_truncate(&self.vocab, self.config.max_positions, text, max_tokens)
    }

    fn max_tokens(&self) -> usize {
        self.stages.last().map_or(DEFAULT_MAX_TOKENS, |s| s.hyperparams.max_tokens)
    }
}

/// Fine-tunes `encoder` plus a fresh head on `train`.
pub fn fine_tune(encoder: &Encoder, train: &LabeledDataset, hp: &HyperParams) -> Result<ClassifierModel, EncoderError> {
    hp.validate(false)?;
    let classes = train.schema().len();
    let mut params = encoder.weights.clone();
    let mut rng = seeded(hp.seed, "classification-head");
    params.extend(init_head(encoder.config.hidden, classes, HEAD_INIT_STD, &mut rng));
    let mut model = ClassifierModel {
        encoder: encoder.reference.clone(),
        config: encoder.config.clone(),
        vocab: encoder.vocab.clone(),
        schema: train.schema().clone(),
        params,
        stages: Vec::new(),
    };
    train_stage(&mut model, train, hp)?;
    Ok(model)
}

/// Further fine-tunes every weight of `model` on `train`, extending its lineage.
pub fn continue_fine_tune(model: &ClassifierModel, train: &LabeledDataset, hp: &HyperParams) -> Result<ClassifierModel, EncoderError> {
    hp.validate(false)?;
    if train.schema().len() != model.head_width() {
        return Err(EncoderError::SchemaMismatch { head: model.head_width(), data: train.schema().len() });
    }
    let mut next = model.clone();
    train_stage(&mut next, train, hp)?;
    Ok(next)
}

fn train_stage(model: &mut ClassifierModel, train: &LabeledDataset, hp: &HyperParams) -> Result<(), EncoderError> {
    let classes = model.schema.len();
    let net = Network::new(&model.config, classes);
    let examples: Vec<(Vec<u32>, usize)> = train
        .items()
        .iter()
        .map(|item| model.tokenize_truncate(&item.post.text, hp.max_tokens).map(|ids| (ids, item.label)))
        .collect::<Result<_, _>>()?;
    let batches_per_epoch = examples.len().div_ceil(hp.batch_size);
    let mut adam = Adam::new(model.params.len(), hp.learning_rate, batches_per_epoch * hp.num_epochs);
    let stage_index = model.stages.len();
    let mut rng = seeded(hp.seed ^ ((stage_index as u64) << 32), "batch-order");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut log = Vec::with_capacity(hp.num_epochs);

    for epoch in 1..=hp.num_epochs {
        shuffle(&mut rng, &mut order);
        let mut total_loss = 0.0;
        for batch in order.chunks(hp.batch_size) {
            grad.fill(0.0);
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let (ids, label) = &examples[i];
                let fwd = net.forward(&model.params, ids);
                total_loss += net.backward(&model.params, &fwd, *label, weight, &mut grad);
            }
            if !total_loss.is_finite() {
                return Err(EncoderError::DivergedLoss { epoch });
            }
            adam.update(&mut model.params, &grad);
        }
        let mean_loss = total_loss / examples.len() as f64;
        if !mean_loss.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(EncoderError::DivergedLoss { epoch });
        }
        log.push(EpochLoss { epoch, mean_loss });
    }
    model.stages.push(TrainingStage { dataset: train.name().to_string(), hyperparams: *hp, log });
    Ok(())
}

/// Class probabilities per post, in input order.
pub fn predict_proba(model: &ClassifierModel, posts: &[Post]) -> Result<ProbabilityMatrix, EncoderError> {
    if posts.is_empty() {
        return Err(EncoderError::EmptyInput);
    }
    let net = Network::new(&model.config, model.schema.len());
    let max_tokens = model.max_tokens();
    let mut values = Vec::with_capacity(posts.len() * model.schema.len());
    for post in posts {
        let ids = model.tokenize_truncate(&post.text, max_tokens)?;
        values.extend(net.forward(&model.params, &ids).probs);
    }
    let ids = posts.iter().map(|p| p.id.clone()).collect();
    ProbabilityMatrix::new(ids, model.schema.len(), values).map_err(|e| EncoderError::InvalidWeights(format!("{e}")))
}

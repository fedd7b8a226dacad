//! Hyperparameter search, published per-model settings, and label alignment
//! for cross-dataset transfer.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{merge_labels, CorpusError, LabelMapping, LabeledDataset};
use crate::encoder::{fine_tune, predict_proba, Encoder, EncoderError, HyperParams, PAPER_BATCH_SIZES, PAPER_EPOCHS, PAPER_LEARNING_RATES};
use crate::metrics::{score_labels, MetricsError};
use crate::probs::hard_labels;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("search space has an empty axis")]
    EmptySpace,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Corpus(CorpusError),
}

impl From<CorpusError> for ExperimentError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::SchemaMismatch(m) => ExperimentError::SchemaMismatch(m),
            CorpusError::NonSurjective(level) => ExperimentError::SchemaMismatch(format!("mapping leaves target level {level} without a source")),
            other => ExperimentError::Corpus(other),
        }
    }
}

/// Candidate values for batch size, learning rate and epoch count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub epoch_counts: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self { batch_sizes: PAPER_BATCH_SIZES.to_vec(), learning_rates: PAPER_LEARNING_RATES.to_vec(), epoch_counts: PAPER_EPOCHS.to_vec() }
    }
}

impl SearchSpace {
    pub fn new(batch_sizes: Vec<usize>, learning_rates: Vec<f64>, epoch_counts: Vec<usize>) -> Result<Self, ExperimentError> {
        let space = Self { batch_sizes, learning_rates, epoch_counts };
        space.check()?;
        Ok(space)
    }

    pub fn check(&self) -> Result<(), ExperimentError> {
        if self.batch_sizes.is_empty() || self.learning_rates.is_empty() || self.epoch_counts.is_empty() {
            return Err(ExperimentError::EmptySpace);
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.batch_sizes.len() * self.learning_rates.len() * self.epoch_counts.len()
    }

    /// Every combination, batch size outermost, with seed and token limit from `base`.
    pub fn cells(&self, base: &HyperParams) -> Vec<HyperParams> {
        let mut out = Vec::with_capacity(self.size());
        for &batch_size in &self.batch_sizes {
            for &learning_rate in &self.learning_rates {
                for &num_epochs in &self.epoch_counts {
                    out.push(HyperParams { batch_size, learning_rate, num_epochs, ..*base });
                }
            }
        }
        out
    }
}

/// One evaluated search cell. `validation_f1` is absent when the space has
/// a single cell and nothing needed comparing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub hyperparams: HyperParams,
    pub validation_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub best: HyperParams,
    pub cells: Vec<GridCell>,
}

/// Orders cells so that the preferred one is greatest: higher validation
/// F1, then fewer epochs, larger batches, smaller learning rate.
pub fn cell_preference(a: &GridCell, b: &GridCell) -> Ordering {
    let score = |c: &GridCell| c.validation_f1.unwrap_or(f64::NEG_INFINITY);
    score(a)
        .total_cmp(&score(b))
        .then(b.hyperparams.num_epochs.cmp(&a.hyperparams.num_epochs))
        .then(a.hyperparams.batch_size.cmp(&b.hyperparams.batch_size))
        .then(b.hyperparams.learning_rate.total_cmp(&a.hyperparams.learning_rate))
}

pub fn select_best(cells: &[GridCell]) -> Option<&GridCell> {
    cells.iter().max_by(|a, b| cell_preference(a, b))
}

/// Fine-tunes on `train` with `hp` and returns weighted F1 on `validation`.
pub fn score_cell(encoder: &Encoder, train: &LabeledDataset, validation: &LabeledDataset, hp: &HyperParams) -> Result<GridCell, ExperimentError> {
    let model = fine_tune(encoder, train, hp)?;
    let probs = predict_proba(&model, &validation.posts())?;
    let scores = score_labels(&validation.labels(), &hard_labels(&probs), validation.schema().len())?;
    Ok(GridCell { hyperparams: *hp, validation_f1: Some(scores.f1_weighted) })
}

fn check_splits(train: &LabeledDataset, validation: &LabeledDataset) -> Result<(), ExperimentError> {
    if train.schema() != validation.schema() {
        return Err(ExperimentError::SchemaMismatch(format!(
            "train uses {} but validation uses {}",
            train.schema().name(),
            validation.schema().name()
        )));
    }
    Ok(())
}

/// Exhaustive search scored by validation weighted F1.
pub fn grid_search(
    encoder: &Encoder,
    space: &SearchSpace,
    train: &LabeledDataset,
    validation: &LabeledDataset,
    base: &HyperParams,
) -> Result<GridOutcome, ExperimentError> {
    grid_search_with(space, train, validation, base, |hp| score_cell(encoder, train, validation, hp))
}

/// [`grid_search`] with a caller-supplied cell evaluator, so callers can
/// cache or parallelize the fits. The evaluator runs once per cell.
pub fn grid_search_with<F>(
    space: &SearchSpace,
    train: &LabeledDataset,
    validation: &LabeledDataset,
    base: &HyperParams,
    mut evaluate: F,
) -> Result<GridOutcome, ExperimentError>
where
    F: FnMut(&HyperParams) -> Result<GridCell, ExperimentError>,
{
    space.check()?;
    check_splits(train, validation)?;
    let candidates = space.cells(base);
    if let [only] = candidates.as_slice() {
        only.validate(false)?;
        return Ok(GridOutcome { best: *only, cells: alloc::vec![GridCell { hyperparams: *only, validation_f1: None }] });
    }
    let cells = candidates.iter().map(&mut evaluate).collect::<Result<Vec<_>, _>>()?;
    finish_search(cells)
}

/// Picks the winner from already-evaluated cells.
pub fn finish_search(cells: Vec<GridCell>) -> Result<GridOutcome, ExperimentError> {
    let best = select_best(&cells).ok_or(ExperimentError::EmptySpace)?.hyperparams;
    Ok(GridOutcome { best, cells })
}

/// Published per-(model, dataset) fine-tuning settings: batch size,
/// epochs, learning rate.
pub const PAPER_SETTINGS: [(&str, &str, usize, usize, f64); 8] = [
    ("bert", "reddit", 32, 15, 5e-5),
    ("roberta", "reddit", 8, 15, 1e-5),
    ("mentalbert", "reddit", 32, 15, 1e-4),
    ("bertweet", "reddit", 16, 15, 5e-5),
    ("bert", "twitter", 32, 15, 5e-5),
    ("roberta", "twitter", 32, 15, 5e-5),
    ("mentalbert", "twitter", 32, 10, 5e-5),
    ("bertweet", "twitter", 16, 5, 5e-5),
];

/// Published settings for `model_id` on `dataset`. Dataset names are
/// matched on their leading `reddit` / `twitter` component, so
/// `twitter-merged` uses the Twitter row.
pub fn paper_hyperparams(model_id: &str, dataset: &str, seed: u64) -> Option<HyperParams> {
    let dataset = dataset.to_ascii_lowercase();
    PAPER_SETTINGS
        .iter()
        .find(|(m, d, ..)| m.eq_ignore_ascii_case(model_id) && dataset.starts_with(d))
        .map(|&(_, _, bs, ne, lr)| HyperParams::new(bs, lr, ne, seed))
}

/// Aligns a transfer pair onto one schema. `mapping` must take whichever
/// side has the other schema onto the other's schema (or be the identity
/// on an already shared schema). Returns `(source, target)`.
pub fn transfer_prepare(
    source: &LabeledDataset,
    target: &LabeledDataset,
    mapping: &LabelMapping,
) -> Result<(LabeledDataset, LabeledDataset), ExperimentError> {
    if source.schema() == target.schema() {
        if mapping.is_identity() && mapping.source() == source.schema() {
            return Ok((source.clone(), target.clone()));
        }
        return Err(ExperimentError::SchemaMismatch(format!(
            "{} and {} already share {}; only the identity mapping applies",
            source.name(),
            target.name(),
            source.schema().name()
        )));
    }
    if mapping.source() == source.schema() && mapping.target() == target.schema() {
        return Ok((merge_labels(source, mapping)?, target.clone()));
    }
    if mapping.source() == target.schema() && mapping.target() == source.schema() {
        return Ok((source.clone(), merge_labels(target, mapping)?));
    }
    Err(ExperimentError::SchemaMismatch(format!(
        "mapping {} ({} -> {}) does not connect {} and {}",
        mapping.name(),
        mapping.source().name(),
        mapping.target().name(),
        source.schema().name(),
        target.schema().name()
    )))
}

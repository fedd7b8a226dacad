//! Experiment orchestration: data preparation, cached training runs,
//! ensembles over cached member runs, general-model selection, grid search
//! and multi-seed aggregation.
//!
//! Trained encoder runs are cached by (encoder, prepared data, hyperparameter
//! plan, seed). An encoder run holds the final model (trained on training and
//! validation data), its test-split probabilities, and the validation
//! weighted F1 of a companion model trained on the training split alone,
//! which is what general-model selection compares. Ensembles only read
//! cached runs and never train.

use std::fs;
use std::path::{Path, PathBuf};

use depkit_core::baselines::{baseline_proba, fit_baseline, BaselineKind};
use depkit_core::corpus::{class_distribution, merge_labels, ClassShare, LabelMapping, LabeledDataset, SplitTag};
use depkit_core::encoder::{continue_fine_tune, fine_tune, predict_proba, ClassifierModel, Encoder, EncoderFamily, EncoderRef, HyperParams};
use depkit_core::ensemble::{fuse, resolve_members, ClassPrior, GENERAL_CANDIDATES};
use depkit_core::experiment::{grid_search_with, paper_hyperparams, score_cell, transfer_prepare, GridOutcome, SearchSpace};
use depkit_core::metrics::{aggregate_runs, score_labels, ScoreSet};
use depkit_core::probs::{hard_labels, ProbabilityMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{key_of, Cache};
use crate::checkpoint::{load_encoder, read_json, save_baseline, save_classifier};
use crate::config::{Config, ExperimentSpec, HpPlan, ModelKind, PriorMode};
use crate::error::{Error, Result};
use crate::io::{format_dataset, load_dataset, read_matrix, resolve_mapping, resolve_schema, write_atomic, write_matrix};
use crate::report::{EvalReport, GeneralChoice, SeedArtifact, StageHp};

/// Bumped whenever cached artifacts change meaning.
const CACHE_VERSION: u32 = 1;

pub const TEST_MATRIX: &str = "test_probs.tsv";
pub const RUN_RECORD: &str = "run.json";
pub const SEARCH_LOG: &str = "search_log.tsv";
pub const CHOSEN_HP: &str = "chosen_hp.toml";
const SEARCH_OUTCOME: &str = "outcome.json";

/// The three splits of one dataset, after any label alignment.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
    /// Hash of the split contents, used in cache keys.
    pub digest: String,
}

impl Splits {
    pub fn name(&self) -> &str {
        self.train.name()
    }

    fn new(train: LabeledDataset, validation: LabeledDataset, test: LabeledDataset) -> Self {
        let digest = key_of(&(train.schema(), [format_dataset(&train), format_dataset(&validation), format_dataset(&test)]));
        Self { train, validation, test, digest }
    }

    pub fn train_and_validation(&self) -> Result<LabeledDataset> {
        Ok(self.train.concat(&self.validation)?)
    }

    fn texts(&self) -> impl Iterator<Item = &str> {
        self.train.items().iter().chain(self.validation.items()).map(|i| i.post.text.as_str())
    }

    fn map(&self, f: impl Fn(&LabeledDataset) -> Result<LabeledDataset>) -> Result<Self> {
        Ok(Self::new(f(&self.train)?, f(&self.validation)?, f(&self.test)?))
    }
}

pub fn load_splits(config: &Config, name: &str) -> Result<Splits> {
    let ds = config.dataset(name)?;
    let schema = resolve_schema(&ds.schema, Path::new("."))?;
    let train = load_dataset(&ds.train, name, &schema, SplitTag::Train)?;
    let validation = load_dataset(&ds.validation, name, &schema, SplitTag::Validation)?;
    let test = load_dataset(&ds.test, name, &schema, SplitTag::Test)?;
    Ok(Splits::new(train, validation, test))
}

/// Datasets an experiment trains and evaluates on, aligned to one schema.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub target: Splits,
    pub source: Option<Splits>,
    pub mapping: Option<String>,
}

/// Relabels `ds` through `mapping` when it uses the mapping's source
/// schema; leaves it alone when it already uses the target schema.
fn align(ds: &LabeledDataset, mapping: &LabelMapping) -> Result<LabeledDataset> {
    if ds.schema() == mapping.target() {
        Ok(ds.clone())
    } else {
        Ok(merge_labels(ds, mapping)?)
    }
}

impl Prepared {
    pub fn load(config: &Config, spec: &ExperimentSpec) -> Result<Self> {
        let target = load_splits(config, &spec.target)?;
        let Some(source_name) = &spec.transfer_source else {
            return Ok(Self { target, source: None, mapping: None });
        };
        let source = load_splits(config, source_name)?;
        let (wide, narrow) = if source.train.schema().len() >= target.train.schema().len() {
            (source.train.schema(), target.train.schema())
        } else {
            (target.train.schema(), source.train.schema())
        };
        let mapping = match &spec.mapping {
            Some(m) => resolve_mapping(m, Path::new("."), wide, narrow)?,
            None => LabelMapping::identity(source.train.schema()),
        };
        // The pair check proper; the remaining splits follow the same rule.
        transfer_prepare(&source.train, &target.train, &mapping)?;
        let (source, target) = if mapping.is_identity() { (source, target) } else { (source.map(|d| align(d, &mapping))?, target.map(|d| align(d, &mapping))?) };
        Ok(Self { target, source: Some(source), mapping: Some(mapping.name().to_string()) })
    }

    fn digests(&self) -> (String, Option<String>) {
        (self.target.digest.clone(), self.source.as_ref().map(|s| s.digest.clone()))
    }

    fn vocabulary_texts(&self) -> Vec<&str> {
        let mut texts: Vec<&str> = self.source.iter().flat_map(Splits::texts).collect();
        texts.extend(self.target.texts());
        texts
    }
}

/// Record stored next to every cached run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: String,
    pub seed: u64,
    pub lineage: Vec<String>,
    pub hyperparams: Vec<StageHp>,
    pub validation_f1: Option<f64>,
    pub test_scores: ScoreSet,
}

/// One seed's evaluated outcome.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub scores: ScoreSet,
    pub matrix: ProbabilityMatrix,
    pub record: RunRecord,
}

#[derive(Serialize)]
struct EncoderRunKey<'a> {
    version: u32,
    encoder: EncoderIdentity,
    target: &'a str,
    source: Option<&'a str>,
    mapping: Option<&'a str>,
    plan: &'a HpPlan,
    search_seed: u64,
    seed: u64,
    max_tokens: usize,
    paper_faithful: bool,
}

#[derive(Serialize)]
enum EncoderIdentity {
    Toy { name: String, config: depkit_core::encoder::ToyConfig },
    Checkpoint { model_id: String, dir: PathBuf },
}

/// Everything needed to run one experiment.
pub struct Workspace {
    pub config: Config,
    pub spec: ExperimentSpec,
    pub cache: Cache,
    pub prepared: Prepared,
}

impl Workspace {
    pub fn new(config: Config, cache: Cache) -> Result<Self> {
        let spec = config.spec()?;
        let prepared = Prepared::load(&config, &spec)?;
        Ok(Self { config, spec, cache, prepared })
    }

    fn is_toy(&self, reference: &EncoderRef) -> bool {
        self.spec.toy || reference.family == EncoderFamily::Toy
    }

    fn identity(&self, name: &str) -> Result<EncoderIdentity> {
        let reference = EncoderRef::resolve(name)?;
        Ok(if self.is_toy(&reference) {
            EncoderIdentity::Toy { name: reference.registry_name.clone(), config: self.config.toy_encoder.clone() }
        } else {
            EncoderIdentity::Checkpoint { model_id: reference.model_id().to_string(), dir: self.checkpoint_dir(&reference)? }
        })
    }

    fn checkpoint_dir(&self, reference: &EncoderRef) -> Result<PathBuf> {
        let dir = self.config.encoders_dir.as_ref().map(|d| d.join(reference.model_id()));
        match dir {
            Some(dir) if dir.join("manifest.json").is_file() => Ok(dir),
            _ => Err(Error::EncoderUnavailable(reference.model_id().to_string())),
        }
    }

    /// A toy encoder over the experiment's texts, or a local checkpoint.
    pub fn build_encoder(&self, name: &str) -> Result<Encoder> {
        let reference = EncoderRef::resolve(name)?;
        if self.is_toy(&reference) {
            return Ok(Encoder::toy(reference, self.prepared.vocabulary_texts(), &self.config.toy_encoder));
        }
        load_encoder(&self.checkpoint_dir(&reference)?)
    }

    fn search_seed(&self) -> u64 {
        self.spec.seeds[0]
    }

    fn encoder_run_key(&self, name: &str, seed: u64) -> Result<String> {
        let (target, source) = self.prepared.digests();
        Ok(key_of(&EncoderRunKey {
            version: CACHE_VERSION,
            encoder: self.identity(name)?,
            target: &target,
            source: source.as_deref(),
            mapping: self.prepared.mapping.as_deref(),
            plan: &self.spec.hyperparams,
            search_seed: self.search_seed(),
            seed,
            max_tokens: self.spec.max_tokens,
            paper_faithful: self.spec.paper_faithful,
        }))
    }

    /// Hyperparameters for training `encoder` on `data`, searching if the plan says so.
    pub fn resolve_hp(&self, encoder: &Encoder, data: &Splits, seed: u64) -> Result<HyperParams> {
        let hp = match &self.spec.hyperparams {
            HpPlan::Fixed(fixed) => HpPlan::with_seed(fixed, seed, self.spec.max_tokens),
            HpPlan::Paper => {
                let name = &encoder.reference().registry_name;
                let hp = paper_hyperparams(name, data.name(), seed)
                    .ok_or_else(|| Error::Config(format!("no published hyperparameters for {name} on {}", data.name())))?;
                HyperParams { max_tokens: self.spec.max_tokens, ..hp }
            }
            HpPlan::Search(space) => HyperParams { seed, ..self.cached_search(encoder, data, space)?.best },
        };
        hp.validate(self.spec.paper_faithful)?;
        Ok(hp)
    }

    fn base_hp(&self) -> HyperParams {
        HyperParams { max_tokens: self.spec.max_tokens, ..HyperParams::new(16, 1e-3, 5, self.search_seed()) }
    }

    /// Grid search on `data`, cached; the search log is kept in the entry.
    pub fn cached_search(&self, encoder: &Encoder, data: &Splits, space: &SearchSpace) -> Result<GridOutcome> {
        read_json(&self.search_entry(encoder, data, space)?.join(SEARCH_OUTCOME))
    }

    /// Cache entry holding `search_log.tsv`, `chosen_hp.toml` and the outcome.
    pub fn search_entry(&self, encoder: &Encoder, data: &Splits, space: &SearchSpace) -> Result<PathBuf> {
        let key = key_of(&(CACHE_VERSION, "search", self.identity(&encoder.reference().registry_name)?, &data.digest, space, self.base_hp()));
        self.cache.get_or_publish("search", &key, |dir| {
            let outcome = parallel_grid_search(encoder, space, &data.train, &data.validation, &self.base_hp())?;
            write_search_artifacts(dir, &outcome)
        })
    }

    /// Cached encoder run for `name` and `seed`, training it if needed.
    pub fn encoder_run(&self, name: &str, seed: u64) -> Result<PathBuf> {
        let key = self.encoder_run_key(name, seed)?;
        if let Some(entry) = self.cache.lookup("runs", &key) {
            if complete_run(&entry) {
                return Ok(entry);
            }
            fs::remove_dir_all(&entry).map_err(Error::io(&entry))?;
        }
        self.cache.publish("runs", &key, |dir| self.train_encoder_run(name, seed, dir))
    }

    /// The cached run for an ensemble member, without training.
    pub fn member_run(&self, name: &str, seed: u64) -> Result<PathBuf> {
        let missing = || Error::MissingMemberRun { member: name.to_string(), seed };
        let key = self.encoder_run_key(name, seed).map_err(|e| match e {
            Error::EncoderUnavailable(_) => missing(),
            other => other,
        })?;
        self.cache.lookup("runs", &key).filter(|e| complete_run(e)).ok_or_else(missing)
    }

    fn train_encoder_run(&self, name: &str, seed: u64, dir: &Path) -> Result<()> {
        let encoder = self.build_encoder(name)?;
        let target = &self.prepared.target;
        let mut stages = Vec::new();
        let stage_hp = |data: &Splits, hp: &HyperParams| StageHp {
            model: name.to_string(),
            dataset: data.name().to_string(),
            batch_size: hp.batch_size,
            learning_rate: hp.learning_rate,
            num_epochs: hp.num_epochs,
            max_tokens: hp.max_tokens,
        };
        let target_hp = self.resolve_hp(&encoder, target, seed)?;
        let (model, selection): (ClassifierModel, ClassifierModel) = match &self.prepared.source {
            Some(source) => {
                let source_hp = self.resolve_hp(&encoder, source, seed)?;
                stages.push(stage_hp(source, &source_hp));
                let first = fine_tune(&encoder, &source.train_and_validation()?, &source_hp)?;
                let model = continue_fine_tune(&first, &target.train_and_validation()?, &target_hp)?;
                let selection = continue_fine_tune(&first, &target.train, &target_hp)?;
                (model, selection)
            }
            None => (fine_tune(&encoder, &target.train_and_validation()?, &target_hp)?, fine_tune(&encoder, &target.train, &target_hp)?),
        };
        stages.push(stage_hp(target, &target_hp));
        let validation = predict_proba(&selection, &target.validation.posts())?;
        let validation_f1 = score_matrix(&target.validation, &validation)?.f1_weighted;
        let test = predict_proba(&model, &target.test.posts())?;
        let record = RunRecord {
            model: name.to_string(),
            seed,
            lineage: model.lineage(),
            hyperparams: stages,
            validation_f1: Some(validation_f1),
            test_scores: score_matrix(&target.test, &test)?,
        };
        save_classifier(&dir.join("model"), &model, &[seed])?;
        write_matrix(&dir.join(TEST_MATRIX), &test)?;
        write_json(&dir.join(RUN_RECORD), &record)
    }

    fn baseline_run(&self, kind: BaselineKind, seed: u64) -> Result<PathBuf> {
        let target = &self.prepared.target;
        let fit_seed = if kind.is_seeded() { seed } else { 0 };
        let key = key_of(&(CACHE_VERSION, "baseline", kind, &self.config.baseline, &target.digest, fit_seed));
        self.cache.get_or_publish("runs", &key, |dir| {
            let model = fit_baseline(kind, &target.train, &self.config.baseline, fit_seed)?;
            let test = baseline_proba(&model, &target.test.posts())?;
            let record = RunRecord {
                model: kind.as_str().to_string(),
                seed: fit_seed,
                lineage: vec![target.name().to_string()],
                hyperparams: vec![],
                validation_f1: None,
                test_scores: score_matrix(&target.test, &test)?,
            };
            save_baseline(&dir.join("model"), &model)?;
            write_matrix(&dir.join(TEST_MATRIX), &test)?;
            write_json(&dir.join(RUN_RECORD), &record)
        })
    }

    /// Picks the general model with the best mean validation F1 across
    /// seeds; ties go to the earlier candidate.
    pub fn choose_general(&self) -> Result<GeneralChoice> {
        let mut scores = std::collections::BTreeMap::new();
        let mut best: Option<(&str, f64)> = None;
        for candidate in GENERAL_CANDIDATES {
            let mut total = 0.0;
            for &seed in &self.spec.seeds {
                let record: RunRecord = read_json(&self.member_run(candidate, seed)?.join(RUN_RECORD))?;
                total += record.validation_f1.ok_or_else(|| Error::MissingArtifact(format!("{candidate} run has no validation score")))?;
            }
            let mean = total / self.spec.seeds.len() as f64;
            scores.insert(candidate.to_string(), mean);
            if best.is_none_or(|(_, b)| mean > b) {
                best = Some((candidate, mean));
            }
        }
        let (model, _) = best.expect("candidates are non-empty");
        Ok(GeneralChoice { model: model.to_string(), validation_f1: scores })
    }

    fn read_run(&self, entry: &Path) -> Result<(ProbabilityMatrix, RunRecord)> {
        Ok((read_matrix(&entry.join(TEST_MATRIX))?, read_json(&entry.join(RUN_RECORD))?))
    }

    /// Runs (or loads) one seed of the experiment. `general` binds the G
    /// slot of ensembles.
    pub fn run_single(&self, seed: u64, general: Option<&str>) -> Result<SeedOutcome> {
        let target = &self.prepared.target;
        let (matrix, record) = match &self.spec.model {
            ModelKind::Baseline(kind) => self.read_run(&self.baseline_run(*kind, seed)?)?,
            ModelKind::Encoder(name) => self.read_run(&self.encoder_run(name, seed)?)?,
            ModelKind::Ensemble { combo, fusion, prior, .. } => {
                let members = resolve_members(*combo, general)?;
                let mut matrices = Vec::new();
                let mut hyperparams = Vec::new();
                let mut lineage = Vec::new();
                for member in &members {
                    let (m, r) = self.read_run(&self.member_run(member, seed)?)?;
                    check_ids(member, &m, &target.test)?;
                    matrices.push(m);
                    hyperparams.extend(r.hyperparams);
                    lineage = r.lineage;
                }
                let prior = match prior {
                    PriorMode::Uniform => ClassPrior::uniform(target.train.schema().len()),
                    PriorMode::Train => ClassPrior::from_counts(&target.train.counts())?,
                };
                let fused = fuse(&matrices, *fusion, &prior)?;
                let record = RunRecord {
                    model: self.spec.row_label(),
                    seed,
                    lineage,
                    hyperparams,
                    validation_f1: None,
                    test_scores: score_matrix(&target.test, &fused)?,
                };
                (fused, record)
            }
        };
        check_ids(&record.model, &matrix, &target.test)?;
        let scores = score_matrix(&target.test, &matrix)?;
        Ok(SeedOutcome { seed, scores, matrix, record })
    }

    /// Runs every seed (in parallel) and aggregates.
    pub fn run_experiment(&self) -> Result<(EvalReport, Vec<SeedOutcome>)> {
        let general_choice = match &self.spec.model {
            ModelKind::Ensemble { combo, general: None, .. } if combo.has_general() => Some(self.choose_general()?),
            ModelKind::Ensemble { general: Some(g), .. } => Some(GeneralChoice { model: g.clone(), validation_f1: Default::default() }),
            _ => None,
        };
        let general = general_choice.as_ref().map(|g| g.model.as_str());
        let outcomes: Vec<SeedOutcome> = self.spec.seeds.par_iter().map(|&seed| self.run_single(seed, general)).collect::<Result<_>>()?;
        let scores: Vec<ScoreSet> = outcomes.iter().map(|o| o.scores.clone()).collect();
        let target = &self.prepared.target;
        let report = EvalReport {
            spec: self.spec.clone(),
            row_label: self.spec.row_label(),
            dataset: target.name().to_string(),
            split: target.test.split().to_string(),
            schema: target.test.schema().name().to_string(),
            general_choice,
            seeds: self.spec.seeds.clone(),
            aggregate: aggregate_runs(&scores)?,
            artifacts: outcomes
                .iter()
                .map(|o| SeedArtifact {
                    seed: o.seed,
                    matrix: seed_matrix_path(o.seed),
                    lineage: o.record.lineage.clone(),
                    hyperparams: o.record.hyperparams.clone(),
                    validation_f1: o.record.validation_f1,
                })
                .collect(),
            notes: EvalReport::standard_notes(&self.spec),
        };
        Ok((report, outcomes))
    }

    /// Key of the whole experiment result.
    pub fn report_key(&self) -> String {
        key_of(&(CACHE_VERSION, "report", self.config.hash(), self.prepared.digests()))
    }

    pub fn class_distributions(&self) -> Vec<(String, SplitTag, Vec<ClassShare>)> {
        let mut out = Vec::new();
        for splits in self.prepared.source.iter().chain([&self.prepared.target]) {
            for ds in [&splits.train, &splits.validation, &splits.test] {
                out.push((ds.name().to_string(), ds.split(), class_distribution(ds)));
            }
        }
        out
    }
}

/// Matrix path of one seed, relative to a report directory.
pub fn seed_matrix_path(seed: u64) -> PathBuf {
    PathBuf::from(format!("seed-{seed}")).join(TEST_MATRIX)
}

fn complete_run(entry: &Path) -> bool {
    entry.join(TEST_MATRIX).is_file() && entry.join(RUN_RECORD).is_file()
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value).expect("records serialize") + "\n")
}

fn check_ids(member: &str, pm: &ProbabilityMatrix, ds: &LabeledDataset) -> Result<()> {
    let same = pm.len() == ds.len() && pm.post_ids().iter().zip(ds.items()).all(|(id, item)| *id == item.post.id);
    if !same || pm.classes() != ds.schema().len() {
        return Err(Error::Data(format!("{member}: probability matrix does not match the posts and levels of {}", ds.name())));
    }
    Ok(())
}

/// Scores a probability matrix against the labels of `ds`.
pub fn score_matrix(ds: &LabeledDataset, pm: &ProbabilityMatrix) -> Result<ScoreSet> {
    check_ids("matrix", pm, ds)?;
    Ok(score_labels(&ds.labels(), &hard_labels(pm), ds.schema().len())?)
}

/// Grid search with cells fitted in parallel. The log keeps the space's
/// cell order.
pub fn parallel_grid_search(
    encoder: &Encoder,
    space: &SearchSpace,
    train: &LabeledDataset,
    validation: &LabeledDataset,
    base: &HyperParams,
) -> Result<GridOutcome> {
    space.check()?;
    let scored = if space.size() > 1 && train.schema() == validation.schema() {
        space.cells(base).par_iter().map(|hp| score_cell(encoder, train, validation, hp)).collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let mut scored = scored.into_iter();
    Ok(grid_search_with(space, train, validation, base, |_| Ok(scored.next().expect("one score per cell")))?)
}

/// One line per cell, then the chosen configuration.
pub fn search_log(outcome: &GridOutcome) -> String {
    outcome
        .cells
        .iter()
        .map(|c| {
            let f1 = c.validation_f1.map(|f| format!("{f:.6}")).unwrap_or_else(|| "-".into());
            format!(
                "batch_size={}\tlearning_rate={:e}\tnum_epochs={}\tvalidation_f1={f1}\n",
                c.hyperparams.batch_size, c.hyperparams.learning_rate, c.hyperparams.num_epochs
            )
        })
        .collect()
}

pub fn chosen_hp_toml(hp: &HyperParams) -> String {
    format!(
        "batch_size = {}\nlearning_rate = {:e}\nnum_epochs = {}\nmax_tokens = {}\n",
        hp.batch_size, hp.learning_rate, hp.num_epochs, hp.max_tokens
    )
}

pub fn write_search_artifacts(dir: &Path, outcome: &GridOutcome) -> Result<()> {
    write_atomic(&dir.join(SEARCH_LOG), search_log(outcome))?;
    write_atomic(&dir.join(CHOSEN_HP), chosen_hp_toml(&outcome.best))?;
    write_json(&dir.join(SEARCH_OUTCOME), outcome)
}

//! Experiment configuration.
//!
//! A config is a TOML document. `--set key=value` overrides are applied to
//! the parsed document before it is interpreted, in order, so the last
//! assignment to a key wins. Values are parsed as TOML literals and fall
//! back to plain strings (`--set experiment.model=bert` needs no quotes).
//!
//! ```toml
//! name = "reddit-mentalbert"
//! seeds = [1, 2, 3]
//! toy = true
//!
//! [datasets.reddit]
//! schema = "depsign-3level"      # built-in name or schema file
//! train = "data/reddit/train.tsv"
//! validation = "data/reddit/dev.tsv"
//! test = "data/reddit/test.tsv"
//!
//! [experiment]
//! target = "reddit"
//! model = "mentalbert"           # baseline kind, encoder name, or e.g. "AE-GMT"
//! hyperparams = { batch_size = 16, learning_rate = 1e-3, num_epochs = 15 }
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use depkit_core::baselines::{BaselineConfig, BaselineKind};
use depkit_core::corpus::{LabelMapping, LabelSchema};
use depkit_core::encoder::{EncoderRef, HyperParams, ToyConfig, DEFAULT_MAX_TOKENS};
use depkit_core::ensemble::{Combo, Fusion};
use depkit_core::experiment::SearchSpace;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_text;

pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Resolve every encoder name to a toy encoder.
    #[serde(default)]
    pub toy: bool,
    /// Pin published hyperparameters and the published search space.
    #[serde(default)]
    pub paper_faithful: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Directory holding local encoder checkpoints, one subdirectory per model id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoders_dir: Option<PathBuf>,
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetConfig>,
    pub experiment: ExperimentSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSpace>,
    #[serde(default)]
    pub toy_encoder: ToyConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub schema: String,
    pub train: PathBuf,
    pub validation: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// Class frequencies of the target training split.
    #[default]
    Train,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HpMode {
    /// Grid search on the validation split.
    Search,
    /// The published per-(model, dataset) settings.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedHp {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub num_epochs: usize,
}

impl Default for FixedHp {
    fn default() -> Self {
        Self { batch_size: 16, learning_rate: 1e-3, num_epochs: 15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpSetting {
    Mode(HpMode),
    Fixed(FixedHp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub target: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combo: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fusion: Option<String>,
    /// General-model slot: an encoder name, or "auto" to pick by validation F1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub general: Option<String>,
    #[serde(default)]
    pub prior: PriorMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperparams: Option<HpSetting>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

/// What an experiment trains or combines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Baseline(BaselineKind),
    Encoder(String),
    Ensemble { combo: Combo, fusion: Fusion, general: Option<String>, prior: PriorMode },
}

impl ModelKind {
    pub fn parse(section: &ExperimentSection) -> Result<Self> {
        let model = section.model.trim();
        if let Ok(kind) = BaselineKind::from_str(model) {
            return Ok(ModelKind::Baseline(kind));
        }
        let ensemble = |fusion: &str, combo: &str| -> Result<Self> {
            let general = section.general.clone().filter(|g| !g.eq_ignore_ascii_case("auto"));
            Ok(ModelKind::Ensemble { combo: combo.parse()?, fusion: fusion.parse()?, general, prior: section.prior })
        };
        if model.eq_ignore_ascii_case("ensemble") {
            let combo = section.combo.as_deref().ok_or_else(|| Error::Config("ensemble needs experiment.combo".into()))?;
            let fusion = section.fusion.as_deref().ok_or_else(|| Error::Config("ensemble needs experiment.fusion".into()))?;
            return ensemble(fusion, combo);
        }
        if let Some((fusion, combo)) = model.split_once('-') {
            if Fusion::from_str(fusion).is_ok() && Combo::from_str(combo).is_ok() {
                return ensemble(fusion, combo);
            }
        }
        EncoderRef::resolve(model).map_err(|e| Error::Config(e.to_string()))?;
        Ok(ModelKind::Encoder(model.to_string()))
    }

    /// Row label in result tables.
    pub fn display_name(&self) -> String {
        match self {
            ModelKind::Baseline(kind) => kind.display_name().to_string(),
            ModelKind::Encoder(name) => EncoderRef::resolve(name).map(|r| r.display_name()).unwrap_or_else(|_| name.clone()),
            ModelKind::Ensemble { combo, fusion, .. } => format!("{}-{combo}", fusion.tag()),
        }
    }
}

/// How each trained encoder obtains its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HpPlan {
    Fixed(FixedHp),
    Search(SearchSpace),
    Paper,
}

impl HpPlan {
    pub fn with_seed(fixed: &FixedHp, seed: u64, max_tokens: usize) -> HyperParams {
        HyperParams { max_tokens, ..HyperParams::new(fixed.batch_size, fixed.learning_rate, fixed.num_epochs, seed) }
    }
}

/// A validated experiment, with every reference resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub target: String,
    pub model: ModelKind,
    pub transfer_source: Option<String>,
    pub mapping: Option<String>,
    pub seeds: Vec<u64>,
    pub hyperparams: HpPlan,
    pub max_tokens: usize,
    pub toy: bool,
    pub paper_faithful: bool,
}

impl ExperimentSpec {
    pub fn is_transfer(&self) -> bool {
        self.transfer_source.is_some()
    }

    pub fn row_label(&self) -> String {
        self.model.display_name()
    }
}

impl fmt::Display for ExperimentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} on {}", self.name, self.row_label(), self.target)?;
        if let Some(source) = &self.transfer_source {
            write!(f, ", transfer from {source}")?;
        }
        write!(f, ")")
    }
}

impl Config {
    /// Validates the experiment section against the rest of the config.
    pub fn spec(&self) -> Result<ExperimentSpec> {
        let e = &self.experiment;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(Error::Config(format!("seed {s} is listed twice")));
            }
        }
        self.dataset(&e.target)?;
        if let Some(source) = &e.transfer_source {
            self.dataset(source)?;
            if source == &e.target {
                return Err(Error::Config("transfer_source must differ from target".into()));
            }
        }
        let model = ModelKind::parse(e)?;
        if matches!(model, ModelKind::Baseline(_)) && e.transfer_source.is_some() {
            return Err(Error::Config("baselines do not support transfer".into()));
        }
        if let ModelKind::Ensemble { general: Some(g), .. } = &model {
            EncoderRef::resolve(g).map_err(|err| Error::Config(err.to_string()))?;
        }
        if e.max_tokens < depkit_core::encoder::MIN_MAX_TOKENS {
            return Err(Error::Config(format!("max_tokens must be at least {}", depkit_core::encoder::MIN_MAX_TOKENS)));
        }
        let hyperparams = match (e.hyperparams, self.paper_faithful) {
            (Some(HpSetting::Mode(HpMode::Search)), faithful) => {
                let space = if faithful { SearchSpace::default() } else { self.search.clone().unwrap_or_default() };
                space.check()?;
                HpPlan::Search(space)
            }
            (Some(HpSetting::Mode(HpMode::Paper)), _) | (None, true) => HpPlan::Paper,
            (Some(HpSetting::Fixed(fixed)), faithful) => {
                HpPlan::with_seed(&fixed, 0, e.max_tokens).validate(faithful)?;
                HpPlan::Fixed(fixed)
            }
            (None, false) => HpPlan::Fixed(FixedHp::default()),
        };
        Ok(ExperimentSpec {
            name: self.name.clone(),
            target: e.target.clone(),
            model,
            transfer_source: e.transfer_source.clone(),
            mapping: e.mapping.clone(),
            seeds: self.seeds.clone(),
            hyperparams,
            max_tokens: e.max_tokens,
            toy: self.toy,
            paper_faithful: self.paper_faithful,
        })
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetConfig> {
        self.datasets.get(name).ok_or_else(|| Error::DatasetNotFound(name.to_string()))
    }

    /// Stable hash of the effective configuration.
    pub fn hash(&self) -> String {
        crate::cache::key_of(self)
    }

    fn absolutize(&mut self, base: &Path) {
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for ds in self.datasets.values_mut() {
            abs(&mut ds.train);
            abs(&mut ds.validation);
            abs(&mut ds.test);
            if LabelSchema::builtin(&ds.schema).is_none() && Path::new(&ds.schema).is_relative() {
                ds.schema = base.join(&ds.schema).to_string_lossy().into_owned();
            }
        }
        if let Some(m) = &mut self.experiment.mapping {
            if LabelMapping::builtin(m).is_none() && Path::new(m.as_str()).is_relative() {
                *m = base.join(&*m).to_string_lossy().into_owned();
            }
        }
        self.out.as_mut().map(abs);
        self.encoders_dir.as_mut().map(abs);
    }
}

fn literal(value: &str) -> toml::Value {
    match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v was parsed"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Applies `dotted.key=value` to a parsed document, creating tables as needed.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment.split_once('=').ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override {assignment:?} has an empty key segment")));
    }
    let (last, parents) = path.split_last().expect("split yields at least one segment");
    let mut table = doc;
    for segment in parents {
        let next = table.entry(segment.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = next.as_table_mut().ok_or_else(|| Error::Config(format!("override {assignment:?}: {segment} is not a table")))?;
    }
    table.insert(last.to_string(), literal(value.trim()));
    Ok(())
}

/// Parses config text, applies overrides in order, and makes every path
/// absolute relative to `base`.
pub fn parse_config(text: &str, base: &Path, overrides: &[String]) -> Result<Config> {
    let mut doc: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let mut config: Config = toml::Value::Table(doc).try_into().map_err(|e| Error::Config(format!("{e}")))?;
    config.absolutize(base);
    Ok(config)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<Config> {
    let text = read_text(path).map_err(|e| Error::Config(e.to_string()))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let base = std::path::absolute(base).map_err(|e| Error::Config(format!("{}: {e}", base.display())))?;
    parse_config(&text, &base, overrides)
}

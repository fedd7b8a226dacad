//! Command-line verbs. Each invocation writes its artifacts and a
//! `manifest.json` into a fresh run directory named by timestamp and
//! config hash.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cache::Cache;
use crate::checkpoint::{read_json, OPTIMIZER};
use crate::config::{load_config, Config, HpPlan, ModelKind};
use crate::error::{Error, Result};
use crate::io::{read_matrix, write_atomic};
use crate::report::{render_table, EvalReport};
use crate::run::{load_splits, score_matrix, seed_matrix_path, write_json, Workspace, CHOSEN_HP, SEARCH_LOG};
use depkit_core::experiment::SearchSpace;
use depkit_core::metrics::aggregate_runs;

pub const MANIFEST: &str = "manifest.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "depkit", version, about = "Depression-level classification experiments: baselines, fine-tuned encoders, ensembles, transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a config value; repeatable, last one wins.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seeds for the repeated runs, e.g. 1,2,3.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Root directory for run directories.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Pin published hyperparameters and the published search space.
    #[arg(long, global = true)]
    pub paper_faithful: bool,
    /// Use toy encoders for every encoder name.
    #[arg(long, global = true)]
    pub toy: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Validate the configured datasets and print their class distributions.
    Ingest,
    /// Fit a baseline and score it on the test split.
    Baseline,
    /// Fine-tune an encoder classifier.
    Finetune,
    /// Combine cached member runs into an ensemble.
    Fuse,
    /// Fine-tune on the source dataset, then on the target.
    Transfer,
    /// Re-score the probability matrices of a run directory.
    Evaluate { run_dir: PathBuf },
    /// Render one results table from several run directories.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
    /// Grid search on the validation split.
    Gridsearch,
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Baseline => "baseline",
            Command::Finetune => "finetune",
            Command::Fuse => "fuse",
            Command::Transfer => "transfer",
            Command::Evaluate { .. } => "evaluate",
            Command::Report { .. } => "report",
            Command::Gridsearch => "gridsearch",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub verb: String,
    pub created: String,
    pub config_hash: Option<String>,
    pub config: Option<Config>,
    pub overrides: Vec<String>,
    pub seeds: Vec<u64>,
    pub cache_hit: bool,
    pub cache_entry: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub optimizer: String,
}

/// What a successful invocation produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub run_dir: PathBuf,
    pub cache_hit: bool,
    pub summary: String,
}

impl Cli {
    /// `--set` values followed by the flag shorthands, in application order.
    pub fn effective_overrides(&self) -> Vec<String> {
        let mut out = self.overrides.clone();
        if let Some(seeds) = &self.seeds {
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            out.push(format!("seeds=[{}]", list.join(", ")));
        }
        if self.toy {
            out.push("toy=true".into());
        }
        if self.paper_faithful {
            out.push("paper_faithful=true".into());
        }
        out
    }

    fn load_config(&self) -> Result<Config> {
        let path = self.config.as_ref().ok_or_else(|| Error::Config(format!("{} needs --config", self.command.verb())))?;
        load_config(path, &self.effective_overrides())
    }

    fn out_root(&self, config: Option<&Config>) -> PathBuf {
        self.out.clone().or_else(|| config.and_then(|c| c.out.clone())).unwrap_or_else(|| PathBuf::from("runs"))
    }
}

/// Creates `<root>/<timestamp>-<hash>`, adding a counter if taken.
pub fn create_run_dir(root: &Path, hash: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(Error::io(root))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let short = &hash[..hash.len().min(12)];
    for n in 1.. {
        let name = if n == 1 { format!("{stamp}-{short}") } else { format!("{stamp}-{short}-{n}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::Io { path: dir, source: e }),
        }
    }
    unreachable!("the counter is unbounded")
}

fn copy_tree(from: &Path, to: &Path, rel: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
    let dir = from.join(rel);
    let mut entries: Vec<_> = fs::read_dir(&dir).map_err(Error::io(&dir))?.collect::<std::result::Result<_, _>>().map_err(Error::io(&dir))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let rel = rel.join(entry.file_name());
        if entry.path().is_dir() {
            fs::create_dir_all(to.join(&rel)).map_err(Error::io(to.join(&rel)))?;
            copy_tree(from, to, &rel, files)?;
        } else {
            fs::copy(entry.path(), to.join(&rel)).map_err(Error::io(to.join(&rel)))?;
            files.push(rel);
        }
    }
    Ok(())
}

fn manifest(cli: &Cli, config: Option<&Config>) -> Manifest {
    Manifest {
        tool: concat!("depkit ", env!("CARGO_PKG_VERSION")).into(),
        verb: cli.command.verb().into(),
        created: chrono::Utc::now().to_rfc3339(),
        config_hash: config.map(Config::hash),
        config: config.cloned(),
        overrides: cli.effective_overrides(),
        seeds: config.map(|c| c.seeds.clone()).unwrap_or_default(),
        cache_hit: false,
        cache_entry: None,
        inputs: vec![],
        artifacts: vec![],
        optimizer: OPTIMIZER.into(),
    }
}

fn expect_model(cli: &Cli, ws: &Workspace) -> Result<()> {
    let ok = match (&cli.command, &ws.spec.model) {
        (Command::Baseline, ModelKind::Baseline(_)) => true,
        (Command::Finetune, ModelKind::Encoder(_)) => !ws.spec.is_transfer(),
        (Command::Transfer, ModelKind::Encoder(_)) => ws.spec.is_transfer(),
        (Command::Fuse, ModelKind::Ensemble { .. }) => true,
        (Command::Gridsearch, ModelKind::Encoder(_)) => true,
        _ => false,
    };
    if ok {
        return Ok(());
    }
    let transfer = if ws.spec.is_transfer() { " with transfer" } else { "" };
    Err(Error::Config(format!("`{}` does not apply to model {:?}{transfer}", cli.command.verb(), ws.config.experiment.model)))
}

pub fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Ingest => ingest(cli),
        Command::Baseline | Command::Finetune | Command::Fuse | Command::Transfer => experiment(cli),
        Command::Evaluate { run_dir } => evaluate(cli, run_dir),
        Command::Report { run_dirs } => report(cli, run_dirs),
        Command::Gridsearch => gridsearch(cli),
    }
}

fn workspace(cli: &Cli) -> Result<(Workspace, PathBuf)> {
    let config = cli.load_config()?;
    let root = cli.out_root(Some(&config));
    let cache = Cache::from_env(root.join("cache"));
    Ok((Workspace::new(config, cache)?, root))
}

fn ingest(cli: &Cli) -> Result<Outcome> {
    let config = cli.load_config()?;
    let root = cli.out_root(Some(&config));
    let mut summary = String::new();
    let mut record = Vec::new();
    for name in config.datasets.keys() {
        let splits = load_splits(&config, name)?;
        for ds in [&splits.train, &splits.validation, &splits.test] {
            let shares = depkit_core::corpus::class_distribution(ds);
            summary.push_str(&format!("{} {} ({} posts):", name, ds.split(), ds.len()));
            for s in &shares {
                let level = ds.schema().level_name(s.level).unwrap_or("?");
                summary.push_str(&format!("  {level} {} ({:.3})", s.count, s.fraction));
            }
            summary.push('\n');
            record.push(serde_json::json!({
                "dataset": name,
                "split": ds.split().as_str(),
                "schema": ds.schema().name(),
                "posts": ds.len(),
                "classes": shares,
            }));
        }
    }
    let dir = create_run_dir(&root, &config.hash())?;
    write_json(&dir.join("ingest.json"), &record)?;
    let mut m = manifest(cli, Some(&config));
    m.artifacts = vec!["ingest.json".into()];
    write_json(&dir.join(MANIFEST), &m)?;
    Ok(Outcome { run_dir: dir, cache_hit: false, summary })
}

fn experiment(cli: &Cli) -> Result<Outcome> {
    let (ws, root) = workspace(cli)?;
    expect_model(cli, &ws)?;
    let key = ws.report_key();
    let cache_hit = ws.cache.lookup("reports", &key).is_some_and(|e| e.join(REPORT_JSON).is_file());
    let entry = ws.cache.get_or_publish("reports", &key, |dir| {
        let (report, outcomes) = ws.run_experiment()?;
        for o in &outcomes {
            crate::io::write_matrix(&dir.join(seed_matrix_path(o.seed)), &o.matrix)?;
        }
        write_atomic(&dir.join(REPORT_JSON), report.to_json())?;
        write_atomic(&dir.join(REPORT_TABLE), render_table(std::slice::from_ref(&report)))
    })?;
    let dir = create_run_dir(&root, &ws.config.hash())?;
    let mut m = manifest(cli, Some(&ws.config));
    copy_tree(&entry, &dir, Path::new(""), &mut m.artifacts)?;
    m.cache_hit = cache_hit;
    m.cache_entry = Some(entry);
    write_json(&dir.join(MANIFEST), &m)?;
    let mut summary = fs::read_to_string(dir.join(REPORT_TABLE)).map_err(Error::io(dir.join(REPORT_TABLE)))?;
    if cache_hit {
        summary.push_str("(cached result; nothing was retrained)\n");
    }
    Ok(Outcome { run_dir: dir, cache_hit, summary })
}

fn read_report(run_dir: &Path) -> Result<EvalReport> {
    let path = run_dir.join(REPORT_JSON);
    if !path.is_file() {
        return Err(Error::MissingArtifact(format!("{} (not a run directory with a report)", path.display())));
    }
    read_json(&path)
}

fn evaluate(cli: &Cli, run_dir: &Path) -> Result<Outcome> {
    let manifest_path = run_dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::MissingArtifact(format!("{} (not a run directory)", manifest_path.display())));
    }
    let source: Manifest = read_json(&manifest_path)?;
    let config = source.config.ok_or_else(|| Error::Config(format!("{} records no config", manifest_path.display())))?;
    let mut report = read_report(run_dir)?;
    let spec = config.spec()?;
    let prepared = crate::run::Prepared::load(&config, &spec)?;
    let test = &prepared.target.test;
    let mut scores = Vec::new();
    for artifact in &report.artifacts {
        let path = run_dir.join(&artifact.matrix);
        if !path.is_file() {
            return Err(Error::MissingArtifact(format!("probability matrix for seed {} ({})", artifact.seed, path.display())));
        }
        scores.push(score_matrix(test, &read_matrix(&path)?)?);
    }
    report.aggregate = aggregate_runs(&scores)?;
    let root = cli.out.clone().or_else(|| run_dir.parent().map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("runs"));
    let dir = create_run_dir(&root, &config.hash())?;
    let table = render_table(std::slice::from_ref(&report));
    write_atomic(&dir.join(REPORT_JSON), report.to_json())?;
    write_atomic(&dir.join(REPORT_TABLE), &table)?;
    let mut m = manifest(cli, Some(&config));
    m.inputs = vec![run_dir.to_path_buf()];
    m.artifacts = vec![REPORT_JSON.into(), REPORT_TABLE.into()];
    write_json(&dir.join(MANIFEST), &m)?;
    Ok(Outcome { run_dir: dir, cache_hit: false, summary: table })
}

fn report(cli: &Cli, run_dirs: &[PathBuf]) -> Result<Outcome> {
    let reports = run_dirs.iter().map(|d| read_report(d)).collect::<Result<Vec<_>>>()?;
    let table = render_table(&reports);
    let hash = crate::cache::key_of(&run_dirs);
    let root = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let dir = create_run_dir(&root, &hash)?;
    write_atomic(&dir.join(REPORT_TABLE), &table)?;
    let mut m = manifest(cli, None);
    m.inputs = run_dirs.to_vec();
    m.artifacts = vec![REPORT_TABLE.into()];
    write_json(&dir.join(MANIFEST), &m)?;
    Ok(Outcome { run_dir: dir, cache_hit: false, summary: table })
}

fn gridsearch(cli: &Cli) -> Result<Outcome> {
    let (ws, root) = workspace(cli)?;
    expect_model(cli, &ws)?;
    let ModelKind::Encoder(name) = &ws.spec.model else { unreachable!("checked by expect_model") };
    let space = match &ws.spec.hyperparams {
        HpPlan::Search(space) => space.clone(),
        _ if ws.spec.paper_faithful => SearchSpace::default(),
        _ => ws.config.search.clone().unwrap_or_default(),
    };
    let encoder = ws.build_encoder(name)?;
    let entry = ws.search_entry(&encoder, &ws.prepared.target, &space)?;
    let dir = create_run_dir(&root, &ws.config.hash())?;
    let mut m = manifest(cli, Some(&ws.config));
    for file in [SEARCH_LOG, CHOSEN_HP] {
        fs::copy(entry.join(file), dir.join(file)).map_err(Error::io(dir.join(file)))?;
        m.artifacts.push(file.into());
    }
    m.cache_entry = Some(entry);
    write_json(&dir.join(MANIFEST), &m)?;
    let chosen = fs::read_to_string(dir.join(CHOSEN_HP)).map_err(Error::io(dir.join(CHOSEN_HP)))?;
    let summary = format!("searched {} configurations for {} on {}; chosen:\n{chosen}", space.size(), name, ws.prepared.target.name());
    Ok(Outcome { run_dir: dir, cache_hit: false, summary })
}

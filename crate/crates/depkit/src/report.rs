//! Evaluation reports: a JSON document per experiment and a rendered
//! results table (Model | Acc | F1 | SD).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use depkit_core::baselines::MAJORITY_NOTE;
use depkit_core::metrics::RunAggregate;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentSpec, ModelKind};

/// Explains the SD column; carried by every report.
pub const SD_NOTE: &str = "SD is the population standard deviation (divide by n) across seeds; \
the table shows the SD of weighted F1, report.json also carries the SD of accuracy and weighted precision/recall";

/// Recorded on transfer reports.
pub const TRANSFER_HP_NOTE: &str = "transfer stages reuse the per-dataset hyperparameters without re-running the search after the first stage";

/// Hyperparameters one trained encoder used on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageHp {
    pub model: String,
    pub dataset: String,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub num_epochs: usize,
    pub max_tokens: usize,
}

/// Outcome of resolving the general-model (G) slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralChoice {
    pub model: String,
    /// Mean validation weighted F1 per candidate; empty when configured explicitly.
    pub validation_f1: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedArtifact {
    pub seed: u64,
    /// Test-split probability matrix, relative to the report directory.
    pub matrix: PathBuf,
    pub lineage: Vec<String>,
    pub hyperparams: Vec<StageHp>,
    pub validation_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub spec: ExperimentSpec,
    pub row_label: String,
    pub dataset: String,
    pub split: String,
    pub schema: String,
    pub general_choice: Option<GeneralChoice>,
    pub seeds: Vec<u64>,
    #[serde(flatten)]
    pub aggregate: RunAggregate,
    pub artifacts: Vec<SeedArtifact>,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Notes every report of this kind carries.
    pub fn standard_notes(spec: &ExperimentSpec) -> Vec<String> {
        let mut notes = vec![SD_NOTE.to_string()];
        if spec.model == ModelKind::Baseline(depkit_core::baselines::BaselineKind::Majority) {
            notes.push(MAJORITY_NOTE.to_string());
        }
        if spec.is_transfer() {
            notes.push(TRANSFER_HP_NOTE.to_string());
        }
        notes
    }

    pub fn lineage(&self) -> &[String] {
        self.artifacts.first().map(|a| a.lineage.as_slice()).unwrap_or(&[])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize") + "\n"
    }
}

const TRANSFER_MARK: &str = " †";

/// Results table in the published layout. Transfer rows carry a dagger and
/// a footnote with their training order.
pub fn render_table(reports: &[EvalReport]) -> String {
    let label = |r: &EvalReport| {
        let mut s = r.row_label.clone();
        if r.spec.is_transfer() {
            s.push_str(TRANSFER_MARK);
        }
        s
    };
    let width = reports.iter().map(|r| label(r).chars().count()).chain([5]).max().unwrap_or(5);
    let mut out = String::new();
    let mut datasets: Vec<&str> = reports.iter().map(|r| r.dataset.as_str()).collect();
    datasets.dedup();
    let _ = writeln!(out, "Results on {} ({} split)", datasets.join(", "), reports.first().map(|r| r.split.as_str()).unwrap_or("test"));
    let _ = writeln!(out, "{:<width$} | Acc   | F1    | SD", "Model");
    let _ = writeln!(out, "{:-<width$}-+-------+-------+-------", "");
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$} | {:.3} | {:.3} | {:.4}",
            label(r),
            r.aggregate.mean_accuracy(),
            r.aggregate.mean_f1_w(),
            r.aggregate.sd_f1_w()
        );
    }
    for r in reports.iter().filter(|r| r.spec.is_transfer()) {
        let _ = writeln!(out, "†{}: fine-tuned on {}", r.row_label, r.lineage().join(", then "));
    }
    let runs: Vec<usize> = reports.iter().map(|r| r.aggregate.runs.len()).collect();
    let _ = writeln!(out, "SD: population standard deviation of weighted F1 over runs (n = {})", join_counts(&runs));
    let mut notes: Vec<&str> = Vec::new();
    for n in reports.iter().flat_map(|r| &r.notes) {
        if n != SD_NOTE && !notes.contains(&n.as_str()) {
            notes.push(n);
        }
    }
    for n in notes {
        let _ = writeln!(out, "Note: {n}");
    }
    out
}

fn join_counts(runs: &[usize]) -> String {
    let mut distinct = runs.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    distinct.iter().map(usize::to_string).collect::<Vec<_>>().join("/")
}

//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

mod common;

use std::cell::Cell;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use common::{Fixture, KEYWORDS_3, TOY_HP};
use depkit::cli::{dispatch, Cli, Manifest, Outcome, MANIFEST, REPORT_JSON};
use depkit::core::baselines::majority_label;
use depkit::core::corpus::{LabelSchema, SplitTag};
use depkit::core::encoder::{Encoder, EncoderRef, HyperParams, ToyConfig};
use depkit::core::ensemble::{average_fuse, bayes_fuse, ClassPrior, PROBABILITY_FLOOR};
use depkit::core::experiment::{grid_search_with, score_cell, select_best, GridCell, SearchSpace};
use depkit::core::metrics::{aggregate_runs, confusion, mean_and_sd, weighted_scores, ConfusionMatrix, ScoreSet};
use depkit::core::probs::{argmax, ProbabilityMatrix};
use depkit::core::LabeledDataset;
use depkit::io::{format_matrix, parse_dataset, read_matrix, write_matrix};
use depkit::report::EvalReport;
use depkit::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(), String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn run(args: &[&str]) -> depkit::Result<Outcome> {
    let mut argv = vec!["depkit"];
    argv.extend_from_slice(args);
    dispatch(&Cli::parse_from(argv))
}

fn read_report(dir: &Path) -> EvalReport {
    serde_json::from_str(&fs::read_to_string(dir.join(REPORT_JSON)).unwrap()).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, ids: &[String], classes: usize) -> ProbabilityMatrix {
    let rows: Vec<Vec<f64>> = ids
        .iter()
        .map(|_| {
            let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(1e-3..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|v| v / total).collect()
        })
        .collect();
    ProbabilityMatrix::from_rows(ids.to_vec(), &rows).unwrap()
}

fn fusion_oracles() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let n = rng.gen_range(1..=50);
        let classes = rng.gen_range(2..=5);
        let k = rng.gen_range(1..=4);
        let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let members: Vec<ProbabilityMatrix> = (0..k).map(|_| random_matrix(&mut rng, &ids, classes)).collect();
        // Alternate between the uniform prior and a skewed one.
        let prior = if case % 2 == 0 {
            ClassPrior::uniform(classes)
        } else {
            let counts: Vec<usize> = (0..classes).map(|_| rng.gen_range(1..100)).collect();
            ClassPrior::from_counts(&counts).map_err(|e| e.to_string())?
        };

        let avg = average_fuse(&members).map_err(|e| e.to_string())?;
        let bayes = bayes_fuse(&members, &prior).map_err(|e| e.to_string())?;
        for i in 0..n {
            // Mean of the member rows.
            for c in 0..classes {
                let mean = members.iter().map(|m| m.row(i)[c]).sum::<f64>() / k as f64;
                ensure!(close(avg.row(i)[c], mean, 1e-12), "case {case}: average cell ({i},{c}) {} vs {mean}", avg.row(i)[c]);
            }
            // Product of member rows over the prior^(k-1), renormalised.
            let unnorm: Vec<f64> = (0..classes)
                .map(|c| {
                    let product: f64 = members.iter().map(|m| m.row(i)[c].max(PROBABILITY_FLOOR)).product();
                    product / prior.weights()[c].powi(k - 1)
                })
                .collect();
            let z: f64 = unnorm.iter().sum();
            for (c, (&got, u)) in bayes.row(i).iter().zip(&unnorm).enumerate() {
                ensure!(close(got, u / z, 1e-12), "case {case}: bayes cell ({i},{c}) {got} vs {}", u / z);
            }
        }

        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        ensure!(average_fuse(&shuffled).unwrap() == avg, "case {case}: average depends on member order");
        ensure!(bayes_fuse(&shuffled, &prior).unwrap() == bayes, "case {case}: bayes depends on member order");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(())
}

fn metric_oracles() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..500 {
        let n = rng.gen_range(1..=200);
        let classes = rng.gen_range(2..=5);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let predicted: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let cm = confusion(&truth, &predicted, classes).map_err(|e| e.to_string())?;
        let got = weighted_scores(&cm).map_err(|e| e.to_string())?;

        let (mut p_w, mut r_w, mut f_w, mut hits) = (0.0, 0.0, 0.0, 0usize);
        for c in 0..classes {
            let tp = (0..n).filter(|&i| truth[i] == c && predicted[i] == c).count() as f64;
            let fp = (0..n).filter(|&i| truth[i] != c && predicted[i] == c).count() as f64;
            let fn_ = (0..n).filter(|&i| truth[i] == c && predicted[i] != c).count() as f64;
            let support = tp + fn_;
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if support > 0.0 { tp / support } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            let w = support / n as f64;
            p_w += w * p;
            r_w += w * r;
            f_w += w * f;
            hits += tp as usize;
        }
        let acc = hits as f64 / n as f64;
        ensure!(close(got.accuracy, acc, 1e-12), "case {case}: accuracy {} vs {acc}", got.accuracy);
        ensure!(close(got.precision_weighted, p_w, 1e-12), "case {case}: precision {} vs {p_w}", got.precision_weighted);
        ensure!(close(got.recall_weighted, r_w, 1e-12), "case {case}: recall {} vs {r_w}", got.recall_weighted);
        ensure!(close(got.f1_weighted, f_w, 1e-12), "case {case}: f1 {} vs {f_w}", got.f1_weighted);
        ensure!(close(got.recall_weighted, got.accuracy, 1e-12), "case {case}: weighted recall {} != accuracy {}", got.recall_weighted, got.accuracy);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(())
}

fn worked_example() -> Check {
    let cm = ConfusionMatrix::from_rows(&[vec![2, 1], vec![0, 1]]);
    let s = weighted_scores(&cm).map_err(|e| e.to_string())?;
    ensure!(close(s.f1_weighted, 0.76667, 1e-5), "f1 {}", s.f1_weighted);
    ensure!(s.accuracy == 0.75, "accuracy {}", s.accuracy);
    Ok(())
}

/// TSV with `counts[l]` posts of each level.
fn counted_tsv(prefix: &str, counts: &[usize]) -> String {
    let mut out = String::from("pid\ttext\tlabel\n");
    let mut i = 0;
    for (label, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let _ = writeln!(out, "{prefix}{i}\tpost number {i} {}\t{label}", KEYWORDS_3[label][i % 3]);
            i += 1;
        }
    }
    out
}

fn majority_baseline() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("reddit");
    fs::create_dir_all(&ds).unwrap();
    fs::write(ds.join("train.tsv"), counted_tsv("tr", &[1659, 5140, 758])).unwrap();
    fs::write(ds.join("dev.tsv"), counted_tsv("dv", &[10, 10, 10])).unwrap();
    fs::write(ds.join("test.tsv"), counted_tsv("te", &[2306, 1830, 360])).unwrap();
    let config = dir.path().join("config.toml");
    fs::write(
        &config,
        "name = \"majority\"\n[datasets.reddit]\nschema = \"depsign-3level\"\ntrain = \"reddit/train.tsv\"\n\
         validation = \"reddit/dev.tsv\"\ntest = \"reddit/test.tsv\"\n[experiment]\ntarget = \"reddit\"\nmodel = \"majority\"\n",
    )
    .unwrap();
    let out = dir.path().join("runs");
    let outcome = run(&["baseline", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]).map_err(|e| e.to_string())?;
    let report = read_report(&outcome.run_dir);
    for (run, artifact) in report.aggregate.runs.iter().zip(&report.artifacts) {
        ensure!(close(run.accuracy, 1830.0 / 4496.0, 1e-9), "seed {} accuracy {}", artifact.seed, run.accuracy);
        let pm = read_matrix(&outcome.run_dir.join(&artifact.matrix)).map_err(|e| e.to_string())?;
        ensure!(pm.rows().all(|r| argmax(r) == 1), "seed {} predicts a label other than 1", artifact.seed);
    }
    ensure!(!report.artifacts.is_empty(), "no runs");
    ensure!(report.notes.iter().any(|n| n.contains("0.513")), "no note on the published majority value: {:?}", report.notes);
    Ok(())
}

struct ToyRuns {
    fixture: Fixture,
    out: PathBuf,
}

impl ToyRuns {
    fn new(experiment: &str) -> Self {
        let fixture = Fixture::new(experiment);
        let out = fixture.path().join("runs");
        Self { fixture, out }
    }

    fn run(&self, verb: &str, extra: &[&str]) -> depkit::Result<Outcome> {
        let config = self.fixture.config.to_str().unwrap().to_string();
        let out = self.out.to_str().unwrap().to_string();
        let mut args = vec![verb, "--config", &config, "--out", &out];
        args.extend_from_slice(extra);
        run(&args)
    }
}

fn toy_end_to_end() -> Check {
    let start = Instant::now();
    let toy = ToyRuns::new(&format!("target = \"reddit\"\nmodel = \"roberta\"\n{TOY_HP}"));
    let mut best_single: f64 = 0.0;
    for model in ["roberta", "bert", "mentalbert", "bertweet"] {
        let set = format!("experiment.model={model}");
        let outcome = toy.run("finetune", &["--seeds", "1,2,3", "--set", &set]).map_err(|e| format!("{model}: {e}"))?;
        let report = read_report(&outcome.run_dir);
        ensure!(report.aggregate.runs.len() == 3, "{model}: {} runs", report.aggregate.runs.len());
        for (run, seed) in report.aggregate.runs.iter().zip(&report.seeds) {
            ensure!(run.accuracy >= 0.90, "{model} seed {seed}: accuracy {:.3}", run.accuracy);
        }
        best_single = best_single.max(report.aggregate.mean_f1_w());
    }
    let fused = toy
        .run("fuse", &["--seeds", "1,2,3", "--set", "experiment.model=AE-GMT", "--set", "experiment.general=auto"])
        .map_err(|e| format!("fuse: {e}"))?;
    let report = read_report(&fused.run_dir);
    ensure!(report.general_choice.is_some(), "general model was not chosen automatically");
    ensure!(report.aggregate.runs.len() == 3, "{} fused runs", report.aggregate.runs.len());
    let f1 = report.aggregate.mean_f1_w();
    ensure!(f1 >= best_single - 0.05, "fused F1 {f1:.3} < best single {best_single:.3} - 0.05");
    ensure!(report.aggregate.sd_f1_w().is_finite() && report.aggregate.mean_accuracy() > 0.0, "missing mean or SD");
    ensure!(report.artifacts.len() == 3, "{} matrices recorded", report.artifacts.len());
    for a in &report.artifacts {
        ensure!(fused.run_dir.join(&a.matrix).is_file(), "matrix {} missing", a.matrix.display());
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(())
}

fn transfer_lineage() -> Check {
    let toy = ToyRuns::new(&format!("target = \"reddit\"\nmodel = \"bert\"\ntransfer_source = \"twitter\"\nmapping = \"twitter-to-3level\"\n{TOY_HP}"));
    let outcome = toy.run("transfer", &["--seeds", "1"]).map_err(|e| e.to_string())?;
    let report = read_report(&outcome.run_dir);
    ensure!(report.lineage() == ["twitter-merged", "reddit"], "lineage {:?}", report.lineage());

    let unmapped = ToyRuns::new(&format!("target = \"reddit\"\nmodel = \"bert\"\ntransfer_source = \"twitter\"\n{TOY_HP}"));
    match unmapped.run("transfer", &["--seeds", "1"]) {
        Err(Error::SchemaMismatch(_)) => Ok(()),
        Err(e) => Err(format!("expected a schema mismatch, got {e}")),
        Ok(_) => Err("transfer without a mapping succeeded".into()),
    }
}

fn toy_split(split: SplitTag, n: usize, salt: u64) -> LabeledDataset {
    let text = common::corpus_tsv(&KEYWORDS_3, split.as_str(), n, salt);
    parse_dataset(&text, Path::new("mem.tsv"), "toy", &LabelSchema::three_level(), split).unwrap()
}

fn grid_search_counts() -> Check {
    let train = toy_split(SplitTag::Train, 60, 3);
    let validation = toy_split(SplitTag::Validation, 30, 5);
    let texts: Vec<&str> = train.items().iter().chain(validation.items()).map(|i| i.post.text.as_str()).collect();
    let config = ToyConfig { max_positions: 64, ..ToyConfig::default() };
    let encoder = Encoder::toy(EncoderRef::resolve("bert").unwrap(), texts, &config);
    let space = SearchSpace::new(vec![8, 16], vec![1e-3, 1e-4], vec![2, 4]).map_err(|e| e.to_string())?;
    let base = HyperParams { max_tokens: 64, ..HyperParams::new(16, 1e-3, 15, 1) };
    let fits = Cell::new(0);
    let outcome = grid_search_with(&space, &train, &validation, &base, |hp| {
        fits.set(fits.get() + 1);
        score_cell(&encoder, &train, &validation, hp)
    })
    .map_err(|e| e.to_string())?;
    ensure!(fits.get() == 8, "{} fits", fits.get());
    ensure!(outcome.cells.len() == 8, "{} cells", outcome.cells.len());
    let best = select_best(&outcome.cells).unwrap();
    ensure!(best.hyperparams == outcome.best, "best is not the preferred cell");
    let mut top = f64::NEG_INFINITY;
    for logged in &outcome.cells {
        let rescored = score_cell(&encoder, &train, &validation, &logged.hyperparams).map_err(|e| e.to_string())?;
        ensure!(rescored.validation_f1 == logged.validation_f1, "{:?}: re-scored {:?}, logged {:?}", logged.hyperparams, rescored.validation_f1, logged.validation_f1);
        top = top.max(rescored.validation_f1.unwrap_or(f64::NEG_INFINITY));
    }
    ensure!(best.validation_f1 == Some(top), "best is not the highest validation F1");

    let toy = ToyRuns::new("target = \"reddit\"\nmodel = \"bert\"\nhyperparams = \"search\"");
    let cli = toy.run("gridsearch", &["--seeds", "1"]).map_err(|e| e.to_string())?;
    let log = fs::read_to_string(cli.run_dir.join(depkit::run::SEARCH_LOG)).map_err(|e| e.to_string())?;
    ensure!(log.lines().count() == 36, "{} log lines", log.lines().count());
    ensure!(cli.run_dir.join(depkit::run::CHOSEN_HP).is_file(), "no chosen configuration file");
    Ok(())
}

fn aggregation() -> Check {
    let (mean, sd) = mean_and_sd(&[0.5, 0.6, 0.7]);
    ensure!(mean == 0.6, "mean {mean}");
    ensure!(close(sd, 0.0816497, 1e-6), "sd {sd}");
    let runs: Vec<ScoreSet> = [0.5, 0.6, 0.7]
        .iter()
        .map(|&a| ScoreSet { accuracy: a, precision_weighted: a, recall_weighted: a, f1_weighted: a, per_class: vec![] })
        .collect();
    let agg = aggregate_runs(&runs).map_err(|e| e.to_string())?;
    ensure!(agg.mean_accuracy() == 0.6 && close(agg.sd_f1_w(), 0.0816497, 1e-6), "aggregate {:?}", agg.mean);
    Ok(())
}

fn tie_breaks() -> Check {
    ensure!(argmax(&[0.5, 0.5]) == 0, "argmax tie does not go to label 0");
    ensure!(majority_label(&[4, 1, 4]) == 0 && majority_label(&[1, 3, 3]) == 1, "majority tie does not go to the lowest index");
    ensure!(argmax(&[0.4, 0.4, 0.2]) == 0, "argmax tie does not go to the lowest index");
    ensure!(argmax(&[0.2, 0.4, 0.4]) == 1, "argmax tie does not go to the lowest index");
    let cell = |bs, lr, ne| GridCell { hyperparams: HyperParams::new(bs, lr, ne, 1), validation_f1: Some(0.8) };
    let pick = |cells: &[GridCell]| {
        let h = select_best(cells).unwrap().hyperparams;
        (h.batch_size, h.learning_rate, h.num_epochs)
    };
    ensure!(pick(&[cell(16, 1e-3, 15), cell(16, 1e-3, 5), cell(16, 1e-3, 10)]) == (16, 1e-3, 5), "fewer epochs should win");
    ensure!(pick(&[cell(8, 1e-3, 5), cell(32, 1e-3, 5), cell(16, 1e-3, 5)]) == (32, 1e-3, 5), "larger batch should win");
    ensure!(pick(&[cell(16, 1e-3, 5), cell(16, 1e-5, 5), cell(16, 1e-4, 5)]) == (16, 1e-5, 5), "smaller learning rate should win");
    let mut better = cell(8, 1e-3, 15);
    better.validation_f1 = Some(0.81);
    ensure!(pick(&[cell(32, 1e-5, 5), better]) == (8, 1e-3, 15), "higher F1 should win over the tie-breaks");
    Ok(())
}

fn matrix_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ids: Vec<String> = (0..200).map(|i| format!("post-{i:03}")).collect();
    ids.shuffle(&mut rng);
    let pm = random_matrix(&mut rng, &ids, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("probs.tsv");
    write_matrix(&path, &pm).map_err(|e| e.to_string())?;
    let back = read_matrix(&path).map_err(|e| e.to_string())?;
    ensure!(back.post_ids() == pm.post_ids(), "id order changed");
    ensure!(back.classes() == pm.classes(), "class count changed");
    let worst = pm.values().iter().zip(back.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(worst <= 1e-10, "largest difference {worst}");
    ensure!(format_matrix(&back) == format_matrix(&pm), "formatting is not stable");
    Ok(())
}

fn rerun_is_cached() -> Check {
    let toy = ToyRuns::new(&format!("target = \"reddit\"\nmodel = \"bert\"\n{TOY_HP}"));
    let first = toy.run("finetune", &["--seeds", "1"]).map_err(|e| e.to_string())?;
    let second = toy.run("finetune", &["--seeds", "1"]).map_err(|e| e.to_string())?;
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(second.run_dir.join(MANIFEST)).unwrap()).unwrap();
    ensure!(!first.cache_hit && second.cache_hit && manifest.cache_hit, "second run was not served from the cache");
    ensure!(first.run_dir != second.run_dir, "re-run reused the run directory");
    ensure!(read_report(&first.run_dir) == read_report(&second.run_dir), "cached report differs");
    Ok(())
}

fn main() {
    std::env::remove_var(depkit::cache::CACHE_ENV);
    std::panic::set_hook(Box::new(|_| {}));
    let criteria: [Criterion; 11] = [
        ("fusion matches mean and product oracles, order-independent", fusion_oracles),
        ("weighted metrics match brute force", metric_oracles),
        ("worked confusion-matrix example", worked_example),
        ("majority baseline on published class counts", majority_baseline),
        ("toy end-to-end: four encoders, three seeds, fused ensemble", toy_end_to_end),
        ("transfer lineage and schema mismatch", transfer_lineage),
        ("grid search fits every cell once", grid_search_counts),
        ("seed aggregation uses population SD", aggregation),
        ("tie-breaking rules", tie_breaks),
        ("probability matrix file round trip", matrix_round_trip),
        ("re-running a cached experiment retrains nothing", rerun_is_cached),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(()) => println!("PASS {name} ({secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Synthetic corpora and configs shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Class-unique keywords for the 3-level toy corpus.
pub const KEYWORDS_3: [[&str; 3]; 3] = [["sunny", "grateful", "cheerful"], ["tired", "drained", "lonely"], ["hopeless", "worthless", "despair"]];

/// Class-unique keywords for the 4-level toy corpus.
pub const KEYWORDS_4: [[&str; 3]; 4] =
    [["sunny", "grateful", "cheerful"], ["restless", "uneasy", "moody"], ["tired", "drained", "lonely"], ["hopeless", "worthless", "despair"]];

const FILLER: [&str; 12] = ["today", "really", "again", "work", "friends", "the", "weekend", "just", "home", "my", "week", "so"];

/// Deterministic pseudo-random index stream (splitmix64).
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// TSV text of `n` posts cycling through the levels, ids prefixed by `prefix`.
pub fn corpus_tsv<const L: usize>(keywords: &[[&str; 3]; L], prefix: &str, n: usize, salt: u64) -> String {
    let mut out = String::from("pid\ttext\tlabel\n");
    for i in 0..n {
        let label = i % L;
        let r = |k: u64| mix(salt ^ ((i as u64) << 8) ^ k) as usize;
        let kw = keywords[label][r(1) % 3];
        let words: Vec<&str> = (0..6).map(|k| FILLER[r(10 + k) % FILLER.len()]).collect();
        let _ = writeln!(out, "{prefix}{i}\t{} {} {kw} {} {} {}\t{label}", words[0], words[1], words[2], words[3], words[4]);
    }
    out
}

/// Writes train/validation/test files for a toy dataset and returns the
/// `[datasets.<name>]` config block.
pub fn write_dataset<const L: usize>(dir: &Path, name: &str, schema: &str, keywords: &[[&str; 3]; L], sizes: [usize; 3]) -> String {
    let ds_dir = dir.join(name);
    fs::create_dir_all(&ds_dir).unwrap();
    for (split, n, salt) in [("train", sizes[0], 11), ("dev", sizes[1], 23), ("test", sizes[2], 37)] {
        let prefix = format!("{name}-{split}-");
        fs::write(ds_dir.join(format!("{split}.tsv")), corpus_tsv(keywords, &prefix, n, salt)).unwrap();
    }
    format!(
        "[datasets.{name}]\nschema = \"{schema}\"\ntrain = \"{name}/train.tsv\"\nvalidation = \"{name}/dev.tsv\"\ntest = \"{name}/test.tsv\"\n"
    )
}

/// A workspace directory with a toy 3-level dataset `reddit` (120/30/30)
/// and a toy 4-level dataset `twitter` (120/30/30), plus `config.toml`.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

pub const TOY_HP: &str = "hyperparams = { batch_size = 16, learning_rate = 1e-3, num_epochs = 15 }";

impl Fixture {
    pub fn new(experiment: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("name = \"toy\"\ntoy = true\nout = \"runs\"\n");
        text.push_str(&write_dataset(dir.path(), "reddit", "depsign-3level", &KEYWORDS_3, [120, 30, 30]));
        text.push_str(&write_dataset(dir.path(), "twitter", "twitter-4level", &KEYWORDS_4, [120, 30, 30]));
        text.push_str("[toy_encoder]\nmax_positions = 64\n");
        text.push_str("[experiment]\n");
        text.push_str(experiment);
        text.push('\n');
        let config = dir.path().join("config.toml");
        fs::write(&config, text).unwrap();
        Self { dir, config }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn cache(&self) -> PathBuf {
        self.dir.path().join("cache")
    }
}

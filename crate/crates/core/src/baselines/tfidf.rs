use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::logreg::SparseRow;
use crate::text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TfidfConfig {
    /// `idf = ln((1 + n) / (1 + df)) + 1` when set, `ln(n / df) + 1` otherwise.
    pub smooth_idf: bool,
    /// Use `1 + ln(tf)` instead of raw counts.
    pub sublinear_tf: bool,
    pub l2_normalize: bool,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        Self { smooth_idf: true, sublinear_tf: false, l2_normalize: true }
    }
}

/// Lowercased word-level TF-IDF with a vocabulary fixed at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVectorizer {
    config: TfidfConfig,
    vocab: BTreeMap<String, u32>,
    idf: Vec<f64>,
}

impl TfidfVectorizer {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, config: TfidfConfig) -> Self {
        let docs: Vec<Vec<String>> = texts.into_iter().map(text::words).collect();
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in &docs {
            let mut unique: Vec<&String> = doc.iter().collect();
            unique.sort();
            unique.dedup();
            for w in unique {
                *df.entry(w.clone()).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let mut vocab = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (i, (word, count)) in df.into_iter().enumerate() {
            let count = count as f64;
            idf.push(if config.smooth_idf { libm::log((1.0 + n) / (1.0 + count)) + 1.0 } else { libm::log(n / count) + 1.0 });
            vocab.insert(word, i as u32);
        }
        Self { config, vocab, idf }
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn config(&self) -> &TfidfConfig {
        &self.config
    }

    /// Unseen words are dropped.
    pub fn transform(&self, text: &str) -> SparseRow {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for w in text::words(text) {
            if let Some(&j) = self.vocab.get(&w) {
                *tf.entry(j).or_default() += 1.0;
            }
        }
        let mut row: SparseRow = tf
            .into_iter()
            .map(|(j, count)| {
                let tf = if self.config.sublinear_tf { 1.0 + libm::log(count) } else { count };
                (j, tf * self.idf[j as usize])
            })
            .collect();
        if self.config.l2_normalize {
            let norm = libm::sqrt(row.iter().map(|(_, v)| v * v).sum::<f64>());
            if norm > 0.0 {
                row.iter_mut().for_each(|(_, v)| *v /= norm);
            }
        }
        row
    }

    pub fn idf_of(&self, word: &str) -> Option<f64> {
        self.vocab.get(word).map(|&j| self.idf[j as usize])
    }

    pub fn dense(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (j, v) in self.transform(text) {
            out[j as usize] = v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothed_idf_and_l2_rows() {
        let v = TfidfVectorizer::fit(["the cat", "the dog", "The bird"], TfidfConfig::default());
        assert_eq!(v.dim(), 4);
        assert!((v.idf_of("the").unwrap() - 1.0).abs() < 1e-15);
        assert!((v.idf_of("cat").unwrap() - (libm::log(4.0 / 2.0) + 1.0)).abs() < 1e-15);
        let row = v.transform("cat cat the");
        let norm: f64 = row.iter().map(|(_, x)| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unseen_words_are_zero() {
        let v = TfidfVectorizer::fit(["alpha beta"], TfidfConfig::default());
        assert!(v.transform("gamma delta").is_empty());
        assert_eq!(v.transform("gamma alpha").len(), 1);
    }
}

//! Paragraph vectors, distributed-memory variant (PV-DM).
//!
//! Each training document owns a vector that is averaged with the vectors of
//! the surrounding context words to predict the centre word, trained with
//! negative sampling. Unseen documents get a vector by the same procedure
//! with word and output weights frozen.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{fnv1a, seeded, shuffle};
use crate::text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DocVecConfig {
    pub dims: usize,
    pub epochs: usize,
    pub window: usize,
    pub negative: usize,
    pub alpha: f64,
    pub min_alpha: f64,
    pub min_count: usize,
    /// Epochs used to infer vectors for unseen documents.
    pub infer_epochs: usize,
}

impl Default for DocVecConfig {
    fn default() -> Self {
        Self { dims: 100, epochs: 20, window: 5, negative: 5, alpha: 0.025, min_alpha: 0.0001, min_count: 1, infer_epochs: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocVecModel {
    config: DocVecConfig,
    seed: u64,
    vocab: BTreeMap<String, u32>,
    /// `V x dims` input word vectors.
    words: Vec<f64>,
    /// `V x dims` output (negative-sampling) vectors.
    output: Vec<f64>,
    /// Cumulative unigram^0.75 noise distribution.
    noise_cdf: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

struct Step<'a> {
    dims: usize,
    window: usize,
    negative: usize,
    noise_cdf: &'a [f64],
}

/// Word or output vectors: mutable during training, frozen during inference.
trait Table {
    fn row(&self, i: usize, d: usize) -> &[f64];
    fn add(&mut self, i: usize, d: usize, delta: &[f64], scale: f64);
}

struct Trainable<'a>(&'a mut [f64]);
struct Frozen<'a>(&'a [f64]);

impl Table for Trainable<'_> {
    fn row(&self, i: usize, d: usize) -> &[f64] {
        &self.0[i * d..(i + 1) * d]
    }
    fn add(&mut self, i: usize, d: usize, delta: &[f64], scale: f64) {
        self.0[i * d..(i + 1) * d].iter_mut().zip(delta).for_each(|(v, x)| *v += scale * x);
    }
}

impl Table for Frozen<'_> {
    fn row(&self, i: usize, d: usize) -> &[f64] {
        &self.0[i * d..(i + 1) * d]
    }
    fn add(&mut self, _: usize, _: usize, _: &[f64], _: f64) {}
}

impl Step<'_> {
    fn sample_noise(&self, rng: &mut ChaCha8Rng) -> usize {
        let total = *self.noise_cdf.last().unwrap_or(&1.0);
        let u = rng.gen::<f64>() * total;
        self.noise_cdf.partition_point(|&c| c <= u).min(self.noise_cdf.len() - 1)
    }

    /// One pass over a document, updating `doc_vec` and whatever tables are trainable.
    fn run_document(&self, doc: &[u32], doc_vec: &mut [f64], words: &mut impl Table, output: &mut impl Table, alpha: f64, rng: &mut ChaCha8Rng) {
        let d = self.dims;
        let mut hidden = vec![0.0; d];
        let mut err = vec![0.0; d];
        for (pos, &centre) in doc.iter().enumerate() {
            let lo = pos.saturating_sub(self.window);
            let hi = (pos + self.window + 1).min(doc.len());
            let context: Vec<usize> = (lo..hi).filter(|&j| j != pos).map(|j| doc[j] as usize).collect();
            let count = (context.len() + 1) as f64;
            hidden.copy_from_slice(doc_vec);
            for &w in &context {
                hidden.iter_mut().zip(words.row(w, d)).for_each(|(h, v)| *h += v);
            }
            hidden.iter_mut().for_each(|h| *h /= count);
            err.iter_mut().for_each(|e| *e = 0.0);

            let centre = centre as usize;
            for k in 0..=self.negative {
                let (target, label) = if k == 0 {
                    (centre, 1.0)
                } else {
                    let t = self.sample_noise(rng);
                    if t == centre {
                        continue;
                    }
                    (t, 0.0)
                };
                let out = output.row(target, d);
                let score: f64 = hidden.iter().zip(out).map(|(h, o)| h * o).sum();
                let g = (label - sigmoid(score)) * alpha;
                err.iter_mut().zip(out).for_each(|(e, o)| *e += g * o);
                output.add(target, d, &hidden, g);
            }
            // The hidden layer is a mean, so each input receives err / count.
            doc_vec.iter_mut().zip(&err).for_each(|(v, e)| *v += e / count);
            for &w in &context {
                words.add(w, d, &err, 1.0 / count);
            }
        }
    }
}

fn init_vector(rng: &mut ChaCha8Rng, dims: usize) -> Vec<f64> {
    (0..dims).map(|_| (rng.gen::<f64>() - 0.5) / dims as f64).collect()
}

fn alpha_at(config: &DocVecConfig, progress: f64) -> f64 {
    config.alpha - (config.alpha - config.min_alpha) * progress.clamp(0.0, 1.0)
}

impl DocVecModel {
    /// Trains on `texts` and returns the model with one vector per text.
    pub fn train<'a>(texts: impl IntoIterator<Item = &'a str>, config: DocVecConfig, seed: u64) -> (Self, Vec<Vec<f64>>) {
        let tokenized: Vec<Vec<String>> = texts.into_iter().map(text::words).collect();
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in &tokenized {
            for w in doc {
                *freq.entry(w.as_str()).or_default() += 1;
            }
        }
        let kept: Vec<(&str, usize)> = freq.into_iter().filter(|&(_, c)| c >= config.min_count).collect();
        let vocab: BTreeMap<String, u32> = kept.iter().enumerate().map(|(i, (w, _))| (String::from(*w), i as u32)).collect();
        let mut noise_cdf = Vec::with_capacity(kept.len());
        let mut acc = 0.0;
        for &(_, c) in &kept {
            acc += libm::pow(c as f64, 0.75);
            noise_cdf.push(acc);
        }

        let d = config.dims;
        let mut rng = seeded(seed, "docvec-train");
        let mut words: Vec<f64> = (0..kept.len()).flat_map(|_| init_vector(&mut rng, d)).collect();
        let mut output = vec![0.0; kept.len() * d];
        let docs: Vec<Vec<u32>> = tokenized.iter().map(|doc| doc.iter().filter_map(|w| vocab.get(w).copied()).collect()).collect();
        let mut doc_vecs: Vec<Vec<f64>> = docs.iter().map(|_| init_vector(&mut rng, d)).collect();

        if !kept.is_empty() {
            let step = Step { dims: d, window: config.window, negative: config.negative, noise_cdf: &noise_cdf };
            let total_words: usize = docs.iter().map(Vec::len).sum::<usize>().max(1) * config.epochs;
            let mut seen = 0usize;
            let mut order: Vec<usize> = (0..docs.len()).collect();
            for _ in 0..config.epochs {
                shuffle(&mut rng, &mut order);
                for &i in &order {
                    let alpha = alpha_at(&config, seen as f64 / total_words as f64);
                    step.run_document(&docs[i], &mut doc_vecs[i], &mut Trainable(&mut words), &mut Trainable(&mut output), alpha, &mut rng);
                    seen += docs[i].len();
                }
            }
        }

        (Self { config, seed, vocab, words, output, noise_cdf }, doc_vecs)
    }

    pub fn dims(&self) -> usize {
        self.config.dims
    }

    pub fn config(&self) -> &DocVecConfig {
        &self.config
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    /// Vector for an unseen document. Deterministic in (model seed, text).
    pub fn infer(&self, text: &str) -> Vec<f64> {
        let mut rng = seeded(self.seed ^ fnv1a(text.as_bytes()), "docvec-infer");
        let mut vec = init_vector(&mut rng, self.config.dims);
        let doc: Vec<u32> = text::words(text).iter().filter_map(|w| self.vocab.get(w).copied()).collect();
        if doc.is_empty() {
            return vec;
        }
        let step = Step { dims: self.config.dims, window: self.config.window, negative: self.config.negative, noise_cdf: &self.noise_cdf };
        let epochs = self.config.infer_epochs.max(1);
        for e in 0..epochs {
            let alpha = alpha_at(&self.config, e as f64 / epochs as f64);
            step.run_document(&doc, &mut vec, &mut Frozen(&self.words), &mut Frozen(&self.output), alpha, &mut rng);
        }
        vec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = libm::sqrt(a.iter().map(|x| x * x).sum());
        let nb: f64 = libm::sqrt(b.iter().map(|x| x * x).sum());
        dot / (na * nb)
    }

    fn corpus() -> Vec<String> {
        let mut docs = Vec::new();
        for i in 0..20 {
            docs.push(alloc::format!("sunny beach holiday swim sea sand {}", i % 3));
            docs.push(alloc::format!("tax invoice payment bank account loan {}", i % 3));
        }
        docs
    }

    #[test]
    fn deterministic_given_seed() {
        let texts = corpus();
        let cfg = DocVecConfig { dims: 16, epochs: 5, ..DocVecConfig::default() };
        let (a, va) = DocVecModel::train(texts.iter().map(String::as_str), cfg.clone(), 7);
        let (b, vb) = DocVecModel::train(texts.iter().map(String::as_str), cfg, 7);
        assert_eq!(va, vb);
        assert_eq!(a.infer("beach sea"), b.infer("beach sea"));
    }

    #[test]
    fn inferred_vectors_cluster_by_topic() {
        let texts = corpus();
        let cfg = DocVecConfig { dims: 20, epochs: 40, ..DocVecConfig::default() };
        let (model, _) = DocVecModel::train(texts.iter().map(String::as_str), cfg, 3);
        let beach = model.infer("sunny beach swim sea");
        let beach2 = model.infer("sand sea holiday beach");
        let bank = model.infer("bank loan payment invoice");
        assert!(cosine(&beach, &beach2) > cosine(&beach, &bank));
    }

    #[test]
    fn unknown_words_give_finite_vector() {
        let (model, _) = DocVecModel::train(["a b c"], DocVecConfig { dims: 4, epochs: 1, ..DocVecConfig::default() }, 1);
        assert!(model.infer("zzz").iter().all(|v| v.is_finite()));
    }
}

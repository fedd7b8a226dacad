//! Algorithmic core for multi-level depression-sign classification of
//! social-media posts.
//!
//! Everything here is pure computation over in-memory values: label schemas
//! and label merging, weighted evaluation metrics, the classical baselines,
//! a small trainable transformer encoder with a CLS softmax head, probability
//! fusion ensembles, and the search/transfer planning used by experiments.
//! File formats, caching and the command line live in the `depkit` crate.
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod corpus;
pub mod encoder;
pub mod ensemble;
pub mod experiment;
pub mod metrics;
pub mod probs;
pub mod text;

mod rng;

pub use corpus::{LabelMapping, LabelSchema, LabeledDataset, LabeledPost, Post, SplitTag};
pub use metrics::{ConfusionMatrix, RunAggregate, ScoreSet};
pub use probs::ProbabilityMatrix;

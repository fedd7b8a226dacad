use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbsError {
    #[error("matrix has no rows")]
    Empty,
    #[error("row count {rows} does not match id count {ids}")]
    RowCount { rows: usize, ids: usize },
    #[error("row {row} of {id:?} is not a distribution: {reason}")]
    InvalidRow { row: usize, id: String, reason: String },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
}

/// Per-post class probabilities, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    post_ids: Vec<String>,
    classes: usize,
    values: Vec<f64>,
}

impl ProbabilityMatrix {
    /// Checks every row is non-negative, finite and sums to one within
    /// [`ROW_SUM_TOLERANCE`].
    pub fn new(post_ids: Vec<String>, classes: usize, values: Vec<f64>) -> Result<Self, ProbsError> {
        if classes < 2 {
            return Err(ProbsError::TooFewClasses(classes));
        }
        if post_ids.is_empty() {
            return Err(ProbsError::Empty);
        }
        if values.len() != post_ids.len() * classes {
            return Err(ProbsError::RowCount { rows: values.len() / classes, ids: post_ids.len() });
        }
        for (row, chunk) in values.chunks(classes).enumerate() {
            let invalid = |reason: String| ProbsError::InvalidRow { row, id: post_ids[row].clone(), reason };
            if let Some(v) = chunk.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(invalid(format!("entry {v}")));
            }
            let sum: f64 = chunk.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(invalid(format!("sums to {sum}")));
            }
        }
        Ok(Self { post_ids, classes, values })
    }

    pub fn from_rows(post_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, ProbsError> {
        let classes = rows.first().map_or(0, Vec::len);
        if let Some((row, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != classes) {
            return Err(ProbsError::InvalidRow {
                row,
                id: post_ids.get(row).cloned().unwrap_or_default(),
                reason: format!("expected {classes} columns"),
            });
        }
        if rows.len() != post_ids.len() {
            return Err(ProbsError::RowCount { rows: rows.len(), ids: post_ids.len() });
        }
        Self::new(post_ids, classes, rows.concat())
    }

    /// One-hot rows, used for hard-label models.
    pub fn one_hot(post_ids: Vec<String>, classes: usize, labels: &[usize]) -> Result<Self, ProbsError> {
        let mut values = alloc::vec![0.0; labels.len() * classes];
        for (i, &l) in labels.iter().enumerate() {
            values[i * classes + l] = 1.0;
        }
        Self::new(post_ids, classes, values)
    }

    pub fn post_ids(&self) -> &[String] {
        &self.post_ids
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.post_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.post_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.classes)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Argmax per row; ties go to the lowest class index.
pub fn hard_labels(pm: &ProbabilityMatrix) -> Vec<usize> {
    pm.rows().map(argmax).collect()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

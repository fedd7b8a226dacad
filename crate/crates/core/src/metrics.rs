//! Confusion matrices and support-weighted precision, recall and F1.
//!
//! Conventions:
//! - precision (recall) is 0 when its denominator is 0;
//! - F1 is 0 when precision + recall is 0;
//! - weighted scores average per-class scores with weights proportional to
//!   class support (row sums);
//! - the standard deviation over repeated runs is the population one
//!   (divide by n).

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("label vectors differ in length ({truth} true vs {predicted} predicted)")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("no labels to evaluate")]
    EmptyInput,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("no runs to aggregate")]
    EmptyList,
}

/// `cell(i, j)` counts items with true label `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    cells: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let classes = rows.len();
        assert!(rows.iter().all(|r| r.len() == classes), "confusion matrix must be square");
        Self { classes, cells: rows.concat() }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cell(&self, truth: usize, predicted: usize) -> u64 {
        self.cells[truth * self.classes + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.cells.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.cell(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.classes).map(|j| self.cell(truth, j)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|i| self.cell(i, predicted)).sum()
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch { truth: truth.len(), predicted: predicted.len() });
    }
    if truth.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut cells = vec![0u64; classes * classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        for label in [t, p] {
            if label >= classes {
                return Err(MetricsError::LabelOutOfRange { label, classes });
            }
        }
        cells[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
    pub per_class: Vec<ClassScores>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn weighted_scores(cm: &ConfusionMatrix) -> Result<ScoreSet, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let per_class: Vec<ClassScores> = (0..cm.classes)
        .map(|c| {
            let tp = cm.cell(c, c);
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            ClassScores { precision, recall, f1: f1(precision, recall), support: cm.row_sum(c) }
        })
        .collect();
    let weighted = |pick: fn(&ClassScores) -> f64| {
        per_class.iter().map(|s| pick(s) * s.support as f64).sum::<f64>() / total as f64
    };
    Ok(ScoreSet {
        accuracy: ratio(cm.trace(), total),
        precision_weighted: weighted(|s| s.precision),
        recall_weighted: weighted(|s| s.recall),
        f1_weighted: weighted(|s| s.f1),
        per_class,
    })
}

/// Confusion plus scores in one step.
pub fn score_labels(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ScoreSet, MetricsError> {
    weighted_scores(&confusion(truth, predicted, classes)?)
}

/// Headline numbers of a [`ScoreSet`], used for run means and deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
}

impl From<&ScoreSet> for Summary {
    fn from(s: &ScoreSet) -> Self {
        Summary {
            accuracy: s.accuracy,
            precision_weighted: s.precision_weighted,
            recall_weighted: s.recall_weighted,
            f1_weighted: s.f1_weighted,
        }
    }
}

/// Repeated runs of one experimental setting (one per seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub runs: Vec<ScoreSet>,
    pub mean: Summary,
    /// Population standard deviation across runs.
    pub sd: Summary,
}

impl RunAggregate {
    pub fn mean_accuracy(&self) -> f64 {
        self.mean.accuracy
    }

    pub fn mean_f1_w(&self) -> f64 {
        self.mean.f1_weighted
    }

    pub fn sd_f1_w(&self) -> f64 {
        self.sd.f1_weighted
    }

    pub fn sd_accuracy(&self) -> f64 {
        self.sd.accuracy
    }
}

/// Arithmetic mean and population standard deviation.
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    // Clamp to the sample range so rounding never pushes the mean outside it.
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mean = mean.clamp(lo, hi);
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

pub fn aggregate_runs(scores: &[ScoreSet]) -> Result<RunAggregate, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let column = |pick: fn(&ScoreSet) -> f64| mean_and_sd(&scores.iter().map(pick).collect::<Vec<_>>());
    let (acc, acc_sd) = column(|s| s.accuracy);
    let (p, p_sd) = column(|s| s.precision_weighted);
    let (r, r_sd) = column(|s| s.recall_weighted);
    let (f, f_sd) = column(|s| s.f1_weighted);
    Ok(RunAggregate {
        runs: scores.to_vec(),
        mean: Summary { accuracy: acc, precision_weighted: p, recall_weighted: r, f1_weighted: f },
        sd: Summary { accuracy: acc_sd, precision_weighted: p_sd, recall_weighted: r_sd, f1_weighted: f_sd },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Definition-level scores straight from (true, pred) pairs, without a
    /// confusion matrix.
    fn brute_force(truth: &[usize], pred: &[usize], classes: usize) -> (f64, f64, f64, f64) {
        let n = truth.len() as f64;
        let acc = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / n;
        let (mut pw, mut rw, mut fw) = (0.0, 0.0, 0.0);
        for c in 0..classes {
            let tp = truth.iter().zip(pred).filter(|&(&t, &p)| t == c && p == c).count() as f64;
            let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
            let actual = truth.iter().filter(|&&t| t == c).count() as f64;
            let prec = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let rec = if actual > 0.0 { tp / actual } else { 0.0 };
            let f = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
            pw += prec * actual / n;
            rw += rec * actual / n;
            fw += f * actual / n;
        }
        (acc, pw, rw, fw)
    }

    #[test]
    fn confusion_by_hand() {
        let cm = confusion(&[0, 0, 0, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(cm.rows(), vec![vec![2, 1], vec![0, 1]]);
    }

    #[test]
    fn confusion_errors() {
        assert_eq!(confusion(&[], &[], 2), Err(MetricsError::EmptyInput));
        assert_eq!(confusion(&[0], &[0, 1], 2), Err(MetricsError::LengthMismatch { truth: 1, predicted: 2 }));
        assert_eq!(confusion(&[0, 2], &[0, 1], 2), Err(MetricsError::LabelOutOfRange { label: 2, classes: 2 }));
    }

    #[test]
    fn identical_vectors_are_diagonal() {
        let labels = [0, 1, 2, 2, 1];
        let cm = confusion(&labels, &labels, 3).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
        let s = weighted_scores(&cm).unwrap();
        assert_eq!((s.accuracy, s.precision_weighted, s.recall_weighted, s.f1_weighted), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn worked_example() {
        let cm = ConfusionMatrix::from_rows(&[vec![2, 1], vec![0, 1]]);
        let s = weighted_scores(&cm).unwrap();
        assert_eq!(s.accuracy, 0.75);
        assert!((s.per_class[0].precision - 1.0).abs() < 1e-15);
        assert!((s.per_class[0].recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.per_class[0].f1 - 0.8).abs() < 1e-15);
        assert!((s.per_class[1].precision - 0.5).abs() < 1e-15);
        assert!((s.per_class[1].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.f1_weighted - 0.766_666_666_666_666_7).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_rejected() {
        let cm = ConfusionMatrix::from_rows(&[vec![0, 0], vec![0, 0]]);
        assert_eq!(weighted_scores(&cm), Err(MetricsError::EmptyMatrix));
    }

    #[test]
    fn equal_precision_recall_gives_same_f1() {
        assert!((f1(0.37, 0.37) - 0.37).abs() < 1e-15);
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn aggregate_examples() {
        let runs = |f1s: &[f64]| -> Vec<ScoreSet> {
            f1s.iter()
                .map(|&f| ScoreSet { accuracy: f, precision_weighted: f, recall_weighted: f, f1_weighted: f, per_class: vec![] })
                .collect()
        };
        let a = aggregate_runs(&runs(&[0.6, 0.6, 0.6])).unwrap();
        assert_eq!((a.mean_f1_w(), a.sd_f1_w()), (0.6, 0.0));
        let a = aggregate_runs(&runs(&[0.5, 0.6, 0.7])).unwrap();
        assert_eq!(a.mean_f1_w(), 0.6);
        assert!((a.sd_f1_w() - 0.081_649_658).abs() < 1e-6);
        let a = aggregate_runs(&runs(&[0.592])).unwrap();
        assert_eq!((a.mean_f1_w(), a.sd_f1_w()), (0.592, 0.0));
        assert_eq!(aggregate_runs(&[]), Err(MetricsError::EmptyList));
    }

    fn pairs() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1usize..=5).prop_flat_map(|l| (Just(l), prop::collection::vec((0..l, 0..l), 1..=200)))
    }

    proptest! {
        #[test]
        fn matches_brute_force((classes, pairs) in pairs()) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let s = score_labels(&t, &p, classes).unwrap();
            let (acc, pw, rw, fw) = brute_force(&t, &p, classes);
            prop_assert!((s.accuracy - acc).abs() < 1e-12);
            prop_assert!((s.precision_weighted - pw).abs() < 1e-12);
            prop_assert!((s.recall_weighted - rw).abs() < 1e-12);
            prop_assert!((s.f1_weighted - fw).abs() < 1e-12);
            prop_assert!((s.recall_weighted - s.accuracy).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&s.f1_weighted));
            prop_assert_eq!(s.per_class.iter().map(|c| c.support).sum::<u64>(), t.len() as u64);
            for (c, cls) in s.per_class.iter().enumerate() {
                let tp = t.iter().zip(&p).filter(|&(&a, &b)| a == c && b == c).count();
                if tp == 0 {
                    prop_assert_eq!(cls.f1, 0.0);
                }
            }
        }

        #[test]
        fn permutation_invariant((classes, pairs) in pairs(), seed in any::<u64>()) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let mut shuffled = pairs.clone();
            crate::rng::shuffle(&mut crate::rng::seeded(seed, "perm"), &mut shuffled);
            let (ts, ps): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            prop_assert_eq!(score_labels(&t, &p, classes).unwrap(), score_labels(&ts, &ps, classes).unwrap());
        }

        #[test]
        fn mean_within_range(values in prop::collection::vec(0.0f64..1.0, 1..10)) {
            let (mean, sd) = mean_and_sd(&values);
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= mean && mean <= hi);
            prop_assert!(sd >= 0.0);
        }
    }
}

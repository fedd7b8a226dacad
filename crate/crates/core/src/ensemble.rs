//! Probability fusion over member classifiers.
//!
//! Averaging takes the element-wise mean of member rows. Bayesian fusion
//! assumes members are conditionally independent given the class, so the
//! combined posterior is proportional to `prior^(1-k) * prod_m p_m` for `k`
//! members; member entries are floored at [`PROBABILITY_FLOOR`] first so a
//! single confident zero cannot annihilate a class.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probs::ProbabilityMatrix;
pub use crate::probs::hard_labels;

pub const PROBABILITY_FLOOR: f64 = 1e-12;

pub const GENERAL_CANDIDATES: [&str; 2] = ["roberta", "bert"];
pub const MENTAL: &str = "mentalbert";
pub const TWEET: &str = "bertweet";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("no members to fuse")]
    NoMembers,
    #[error("member {member} has {found} classes, expected {expected}")]
    ShapeMismatch { member: usize, expected: usize, found: usize },
    #[error("member {member} lists posts in a different order")]
    IdOrderMismatch { member: usize },
    #[error("prior weight {index} is {weight}; priors must be strictly positive and sum to 1")]
    DegeneratePrior { index: usize, weight: f64 },
    #[error("combo {0} needs a general model choice")]
    MissingGeneralChoice(Combo),
    #[error("{combo} expects {expected} members, got {found}")]
    MemberCount { combo: Combo, expected: usize, found: usize },
    #[error("duplicate member {0:?}")]
    DuplicateMember(String),
    #[error("unknown {what} {value:?}")]
    Unknown { what: &'static str, value: String },
}

/// Member combinations: G = general model, M = mental-health model,
/// T = tweet model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Combo {
    Gmt,
    Gt,
    Gm,
    Mt,
}

impl Combo {
    pub const ALL: [Combo; 4] = [Combo::Gmt, Combo::Gm, Combo::Mt, Combo::Gt];

    pub fn has_general(self) -> bool {
        !matches!(self, Combo::Mt)
    }

    pub fn member_count(self) -> usize {
        match self {
            Combo::Gmt => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combo::Gmt => "GMT",
            Combo::Gt => "GT",
            Combo::Gm => "GM",
            Combo::Mt => "MT",
        })
    }
}

impl FromStr for Combo {
    type Err = EnsembleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GMT" => Ok(Combo::Gmt),
            "GT" => Ok(Combo::Gt),
            "GM" => Ok(Combo::Gm),
            "MT" => Ok(Combo::Mt),
            _ => Err(EnsembleError::Unknown { what: "combo", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    Averaging,
    Bayesian,
}

impl Fusion {
    /// Short table label: AE or BE.
    pub fn tag(self) -> &'static str {
        match self {
            Fusion::Averaging => "AE",
            Fusion::Bayesian => "BE",
        }
    }
}

impl FromStr for Fusion {
    type Err = EnsembleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "averaging" | "average" | "ae" => Ok(Fusion::Averaging),
            "bayesian" | "bayes" | "be" => Ok(Fusion::Bayesian),
            _ => Err(EnsembleError::Unknown { what: "fusion", value: s.to_string() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub combo: Combo,
    pub fusion: Fusion,
    members: Vec<String>,
}

impl EnsembleSpec {
    pub fn new(combo: Combo, fusion: Fusion, members: Vec<String>) -> Result<Self, EnsembleError> {
        if members.len() != combo.member_count() {
            return Err(EnsembleError::MemberCount { combo, expected: combo.member_count(), found: members.len() });
        }
        for (i, m) in members.iter().enumerate() {
            if members[..i].contains(m) {
                return Err(EnsembleError::DuplicateMember(m.clone()));
            }
        }
        Ok(Self { combo, fusion, members })
    }

    pub fn members(&self) -> &[String] {
        &self.members
    }
}

/// Member identifiers for `combo`, with the G slot bound to `general`.
pub fn resolve_members(combo: Combo, general: Option<&str>) -> Result<Vec<String>, EnsembleError> {
    let g = || general.map(str::to_string).ok_or(EnsembleError::MissingGeneralChoice(combo));
    Ok(match combo {
        Combo::Gmt => vec![g()?, MENTAL.into(), TWEET.into()],
        Combo::Gt => vec![g()?, TWEET.into()],
        Combo::Gm => vec![g()?, MENTAL.into()],
        Combo::Mt => vec![MENTAL.into(), TWEET.into()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    weights: Vec<f64>,
}

impl ClassPrior {
    pub fn new(weights: Vec<f64>) -> Result<Self, EnsembleError> {
        for (index, &weight) in weights.iter().enumerate() {
            if !(weight.is_finite() && weight > 0.0) {
                return Err(EnsembleError::DegeneratePrior { index, weight });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(EnsembleError::DegeneratePrior { index: 0, weight: weights.first().copied().unwrap_or(0.0) });
        }
        Ok(Self { weights })
    }

    pub fn uniform(classes: usize) -> Self {
        Self { weights: vec![1.0 / classes as f64; classes] }
    }

    /// Class frequencies of a label vector.
    pub fn from_counts(counts: &[usize]) -> Result<Self, EnsembleError> {
        let total: usize = counts.iter().sum();
        Self::new(counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    pub fn classes(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn check_members(members: &[ProbabilityMatrix]) -> Result<&ProbabilityMatrix, EnsembleError> {
    let first = members.first().ok_or(EnsembleError::NoMembers)?;
    for (i, m) in members.iter().enumerate().skip(1) {
        if m.classes() != first.classes() {
            return Err(EnsembleError::ShapeMismatch { member: i, expected: first.classes(), found: m.classes() });
        }
        if m.post_ids() != first.post_ids() {
            return Err(EnsembleError::IdOrderMismatch { member: i });
        }
    }
    Ok(first)
}

/// Sums in ascending order, so the result does not depend on member order.
fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

pub fn average_fuse(members: &[ProbabilityMatrix]) -> Result<ProbabilityMatrix, EnsembleError> {
    let first = check_members(members)?;
    let k = members.len() as f64;
    let mut cell = Vec::with_capacity(members.len());
    let values = (0..first.values().len())
        .map(|i| {
            cell.clear();
            cell.extend(members.iter().map(|m| m.values()[i]));
            sorted_sum(&mut cell) / k
        })
        .collect();
    Ok(ProbabilityMatrix::new(first.post_ids().to_vec(), first.classes(), values).expect("mean of distributions is a distribution"))
}

pub fn bayes_fuse(members: &[ProbabilityMatrix], prior: &ClassPrior) -> Result<ProbabilityMatrix, EnsembleError> {
    let first = check_members(members)?;
    let classes = first.classes();
    if prior.classes() != classes {
        return Err(EnsembleError::ShapeMismatch { member: members.len(), expected: classes, found: prior.classes() });
    }
    let k = members.len() as f64;
    let log_prior: Vec<f64> = prior.weights.iter().map(|&w| (1.0 - k) * libm::log(w)).collect();
    let mut values = Vec::with_capacity(first.values().len());
    let mut log_row = vec![0.0; classes];
    let mut cell = Vec::with_capacity(members.len());
    for row in 0..first.len() {
        for (c, acc) in log_row.iter_mut().enumerate() {
            cell.clear();
            cell.extend(members.iter().map(|m| libm::log(m.row(row)[c].max(PROBABILITY_FLOOR))));
            *acc = log_prior[c] + sorted_sum(&mut cell);
        }
        let max = log_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = values.len();
        values.extend(log_row.iter().map(|&l| libm::exp(l - max)));
        let sum: f64 = values[start..].iter().sum();
        for v in &mut values[start..] {
            *v /= sum;
        }
    }
    ProbabilityMatrix::new(first.post_ids().to_vec(), classes, values)
        .map_err(|e| EnsembleError::Unknown { what: "fused row", value: format!("{e}") })
}

pub fn fuse(members: &[ProbabilityMatrix], fusion: Fusion, prior: &ClassPrior) -> Result<ProbabilityMatrix, EnsembleError> {
    match fusion {
        Fusion::Averaging => average_fuse(members),
        Fusion::Bayesian => bayes_fuse(members, prior),
    }
}

//! Accuracy, permutation-invariant accuracy, and group-level MIL accuracy.

mod assignment;

use serde::{Deserialize, Serialize};

use crate::data::{AggregateObservation, Dataset};
use crate::error::{Error, Result};
use crate::loss::group_etas;
use crate::model::Model;
use crate::posterior::posterior_mil;

pub use assignment::min_cost_assignment;

pub const MAX_ASSIGNMENT_CLASSES: usize = 64;

/// Fraction of exact matches.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `counts[a][b]`: instances predicted `a` whose true class is `b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    counts: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let rows = counts.len();
        if let Some(bad) = counts.iter().find(|r| r.len() != rows) {
            return Err(Error::NonSquare { rows, cols: bad.len() });
        }
        if rows == 0 || rows > MAX_ASSIGNMENT_CLASSES {
            return Err(Error::NonSquare { rows, cols: rows });
        }
        Ok(ConfusionCounts { counts })
    }

    pub fn from_predictions(preds: &[usize], labels: &[usize], k: usize) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::LengthMismatch(preds.len(), labels.len()));
        }
        let mut counts = vec![vec![0u64; k]; k];
        for (&p, &l) in preds.iter().zip(labels) {
            if p >= k || l >= k {
                return Err(Error::LabelOutOfRange { label: p.max(l), k });
            }
            counts[p][l] += 1;
        }
        ConfusionCounts::new(counts)
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Best accuracy over all relabelings of the predicted classes, and the
/// relabeling that achieves it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matched {
    pub accuracy: f64,
    /// `permutation[predicted] = true class`.
    pub permutation: Vec<usize>,
}

impl Matched {
    pub fn apply(&self, pred: usize) -> usize {
        self.permutation[pred]
    }
}

/// Permutation-invariant accuracy: the assignment of predicted to true
/// classes maximizing matched counts, solved as a linear sum assignment on
/// negated counts. Ties go to the lexicographically smallest permutation.
pub fn modified_accuracy(confusion: &ConfusionCounts) -> Result<Matched> {
    let total = confusion.total();
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    let cost: Vec<Vec<i64>> = confusion.counts.iter().map(|r| r.iter().map(|&c| -(c as i64)).collect()).collect();
    let permutation = min_cost_assignment(&cost);
    let matched: u64 = permutation.iter().enumerate().map(|(a, &b)| confusion.counts[a][b]).sum();
    Ok(Matched { accuracy: matched as f64 / total as f64, permutation })
}

pub fn predictions(model: &Model, data: &Dataset) -> Result<Vec<usize>> {
    data.examples().iter().map(|e| model.predict(&e.features)).collect()
}

/// How a bag label is predicted from instance probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BagRule {
    /// Positive when `p(z = 1 | x) >= 0.5`.
    #[default]
    Probability,
    /// Positive when any instance is predicted positive.
    AnyPositive,
}

pub fn predict_bag(model: &Model, xs: &[Vec<f64>], rule: BagRule) -> Result<bool> {
    match rule {
        BagRule::Probability => {
            let etas = group_etas(model, xs)?;
            Ok(posterior_mil(&etas, true)?.pz >= 0.5)
        }
        BagRule::AnyPositive => {
            for x in xs {
                if model.predict(x)? == 1 {
                    return Ok(true);
                }
            }
            Ok(false)
        }
    }
}

/// Fraction of bags whose predicted label matches the observed one.
pub fn group_accuracy_mil(model: &Model, observations: &[AggregateObservation], rule: BagRule) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut hits = 0usize;
    for obs in observations {
        let z = obs.z.as_binary().ok_or_else(|| Error::AggregateMismatch("mil needs binary labels".into()))?;
        if predict_bag(model, &obs.xs, rule)? == z {
            hits += 1;
        }
    }
    Ok(hits as f64 / observations.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub modified_accuracy: f64,
    pub permutation: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Instance-level report on `test`. The class permutation is fitted on
/// `fit` (normally the validation split) and applied unchanged to `test`;
/// pass `test` itself to fit on the test split.
pub fn evaluate(model: &Model, test: &Dataset, fit: &Dataset) -> Result<EvalReport> {
    let k = model.num_classes().max(test.num_classes()).max(fit.num_classes());
    let test_preds = predictions(model, test)?;
    let test_labels = test.labels();
    let fit_preds = predictions(model, fit)?;
    let matched = modified_accuracy(&ConfusionCounts::from_predictions(&fit_preds, &fit.labels(), k)?)?;
    let relabeled: Vec<usize> = test_preds.iter().map(|&p| matched.apply(p)).collect();
    Ok(EvalReport {
        accuracy: accuracy(&test_preds, &test_labels)?,
        modified_accuracy: accuracy(&relabeled, &test_labels)?,
        permutation: matched.permutation,
        group_accuracy: None,
        config_hash: None,
    })
}

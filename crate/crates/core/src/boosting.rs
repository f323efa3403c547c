//! Instance weights over the labeled set, weighted error, model
//! coefficients, large-error selection and the weighted ensemble.

use serde::{Deserialize, Serialize};

use crate::catalog::Label;
use crate::error::{Error, Result};
use crate::learner::MlpModel;

/// Clip bound for the weighted error.
pub const ERR_EPS: f64 = 1e-8;

pub fn init_weights(n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(vec![1.0 / n as f64; n])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedError {
    pub raw: f64,
    pub clipped: f64,
}

pub fn weighted_error(weights: &[f64], predictions: &[Label], labels: &[Label]) -> Result<WeightedError> {
    check_len(weights.len(), predictions.len())?;
    check_len(weights.len(), labels.len())?;
    let total: f64 = weights.iter().sum();
    let wrong: f64 = weights
        .iter()
        .zip(predictions.iter().zip(labels))
        .filter(|(_, (p, y))| p != y)
        .map(|(w, _)| w)
        .sum();
    let raw = wrong / total;
    Ok(WeightedError {
        raw,
        clipped: raw.clamp(ERR_EPS, 1.0 - ERR_EPS),
    })
}

pub fn model_coefficient(err: f64) -> f64 {
    ((1.0 - err) / err).ln()
}

/// Multiplies the weight of every misclassified instance by `exp(alpha)`.
/// Weights are not renormalized.
pub fn update_weights(weights: &mut [f64], predictions: &[Label], labels: &[Label], alpha: f64) -> Result<()> {
    check_len(weights.len(), predictions.len())?;
    check_len(weights.len(), labels.len())?;
    let factor = alpha.exp();
    for (i, w) in weights.iter_mut().enumerate() {
        if predictions[i] != labels[i] {
            let next = *w * factor;
            if !next.is_finite() {
                return Err(Error::Overflow { instance: i });
            }
            *w = next;
        }
    }
    Ok(())
}

/// Ids of the `n` largest weights, ties by ascending id. The result is in
/// selection order (largest first).
pub fn select_large_error(weights: &[f64], n: usize) -> Vec<usize> {
    if n > weights.len() {
        log::warn!("asked for {n} large-error instances but only {} exist", weights.len());
    }
    let mut ids: Vec<usize> = (0..weights.len()).collect();
    ids.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    ids.truncate(n.min(weights.len()));
    ids
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { expected, got });
    }
    Ok(())
}

pub trait Classifier {
    fn classify(&self, x: &[f64]) -> Label;
}

impl Classifier for MlpModel {
    fn classify(&self, x: &[f64]) -> Label {
        self.predict(x).map(|(l, _)| l).unwrap_or(Label::Positive)
    }
}

/// Sign of `sum alpha_t * vote_t`; an exact zero goes to +1.
pub fn weighted_vote(votes: impl IntoIterator<Item = (Label, f64)>) -> Label {
    let s: f64 = votes.into_iter().map(|(l, a)| a * l.sign() as f64).sum();
    if s < 0.0 {
        Label::Negative
    } else {
        Label::Positive
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleModel<M> {
    pub members: Vec<(M, f64)>,
}

impl<M> Default for EnsembleModel<M> {
    fn default() -> Self {
        EnsembleModel { members: Vec::new() }
    }
}

impl<M: Classifier> EnsembleModel<M> {
    pub fn push(&mut self, model: M, alpha: f64) {
        self.members.push((model, alpha));
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        if self.members.is_empty() {
            return Err(Error::State("ensemble has no members".into()));
        }
        Ok(weighted_vote(self.members.iter().map(|(m, a)| (m.classify(x), *a))))
    }

    /// Prediction of the ensemble truncated to its first `k` members.
    pub fn predict_prefix(&self, x: &[f64], k: usize) -> Result<Label> {
        if k == 0 || k > self.members.len() {
            return Err(Error::State(format!("no ensemble prefix of length {k}")));
        }
        Ok(weighted_vote(self.members[..k].iter().map(|(m, a)| (m.classify(x), *a))))
    }
}

/// Audit record of one boosting round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub err_raw: f64,
    pub err: f64,
    pub alpha: f64,
    pub weight_sum_before: f64,
    pub weight_sum_after: f64,
    pub misclassified: usize,
}

/// Weights over the labeled set plus the per-round records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostState {
    pub weights: Vec<f64>,
    pub iteration: usize,
    pub records: Vec<IterationRecord>,
}

impl BoostState {
    pub fn new(n: usize) -> Result<Self> {
        Ok(BoostState {
            weights: init_weights(n)?,
            iteration: 0,
            records: Vec::new(),
        })
    }

    /// One round: weighted error, coefficient and weight update from the
    /// given predictions over the labeled set.
    pub fn step(&mut self, predictions: &[Label], labels: &[Label]) -> Result<IterationRecord> {
        let err = weighted_error(&self.weights, predictions, labels)?;
        let alpha = model_coefficient(err.clipped);
        let before: f64 = self.weights.iter().sum();
        let mut next = self.weights.clone();
        update_weights(&mut next, predictions, labels, alpha)?;
        self.weights = next;
        self.iteration += 1;
        let record = IterationRecord {
            iteration: self.iteration,
            err_raw: err.raw,
            err: err.clipped,
            alpha,
            weight_sum_before: before,
            weight_sum_after: self.weights.iter().sum(),
            misclassified: predictions.iter().zip(labels).filter(|(p, y)| p != y).count(),
        };
        self.records.push(record.clone());
        Ok(record)
    }
}

use serde::{Deserialize, Serialize};

use crate::catalog::{Label, PlantedRule};
use crate::rules::{AcceptedRule, Polarity, RuleKind};

pub const SCHEMA_VERSION: u32 = 1;

/// Per-iteration figures. Accuracies are against the weak labels of the
/// validation and test partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub err_raw: f64,
    pub err: f64,
    pub alpha: f64,
    pub misclassified: usize,
    pub learning_rate: f64,
    pub best_epoch: usize,
    /// Size of the training set the model saw (labeled plus minted).
    pub train_size: usize,
    pub candidates: usize,
    pub accepted: usize,
    pub minted: usize,
    /// Share of minted pairs that are truly compatible, when ground truth is
    /// known.
    pub minted_precision: Option<f64>,
    pub unlabeled_remaining: usize,
    pub model_validation_accuracy: f64,
    pub model_test_accuracy: f64,
    pub ensemble_validation_accuracy: f64,
    pub ensemble_test_accuracy: f64,
    /// Planted rules recovered by the accepted rules so far.
    pub planted_recovered: usize,
    pub lm_degraded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub seed: u64,
    pub ablation: String,
    pub labeled: usize,
    pub validation: usize,
    pub test: usize,
    pub unlabeled: usize,
    pub iterations: Vec<IterationMetrics>,
    pub first_model_test_accuracy: f64,
    pub final_validation_accuracy: f64,
    pub final_test_accuracy: f64,
    pub rules_accepted: usize,
    pub rules_rejected: usize,
    pub minted_total: usize,
    pub planted_total: usize,
    pub planted_recovered: usize,
}

pub fn accuracy(predictions: &[Label], labels: &[Label]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Whether an accepted rule states a planted rule. A prompt rule saying the
/// values are the same for compatible pairs counts for an exact-match truth.
pub fn recovers(truth: &PlantedRule, rule: &AcceptedRule) -> bool {
    match (truth, &rule.kind) {
        (PlantedRule::ExactMatch { attribute: a }, RuleKind::ExactMatch { attribute }) => a == attribute,
        (PlantedRule::ExactMatch { attribute: a }, RuleKind::Prompt(p)) => {
            &p.attribute == a && p.relation == "same" && p.polarity == Polarity::Compatible
        }
        (
            PlantedRule::Range {
                anchor_attribute: ta,
                rec_attribute: tr,
                direction: td,
            },
            RuleKind::Range {
                anchor_attribute,
                rec_attribute,
                direction,
            },
        ) => ta == anchor_attribute && tr == rec_attribute && td == direction,
        (PlantedRule::Contain { attribute: a, side: s }, RuleKind::Contain { attribute, side }) => {
            a == attribute && s == side
        }
        (t, RuleKind::And { parts }) => parts.iter().any(|p| {
            recovers(
                t,
                &AcceptedRule {
                    id: rule.id.clone(),
                    kind: p.clone(),
                    mu: rule.mu,
                    iteration: rule.iteration,
                },
            )
        }),
        _ => false,
    }
}

pub fn planted_recovered(truth: &[PlantedRule], accepted: &[AcceptedRule]) -> usize {
    truth
        .iter()
        .filter(|t| accepted.iter().any(|r| recovers(t, r)))
        .count()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{Direction, PromptRule, RuleId, Side};
    use crate::catalog::PairKey;

    fn accepted(kind: RuleKind) -> AcceptedRule {
        AcceptedRule {
            id: RuleId("t01-r0001".into()),
            kind,
            mu: 0.1,
            iteration: 1,
        }
    }

    #[test]
    fn accuracy_counts_agreement() {
        use Label::*;
        assert_eq!(accuracy(&[Positive, Negative, Positive], &[Positive, Positive, Positive]), 2.0 / 3.0);
        assert_eq!(accuracy(&[], &[]), 0.0);
    }

    #[test]
    fn range_recovery_needs_the_true_direction() {
        let truth = PlantedRule::Range {
            anchor_attribute: "max_wattage".into(),
            rec_attribute: "wattage".into(),
            direction: Direction::Ge,
        };
        let mk = |direction| {
            accepted(RuleKind::Range {
                anchor_attribute: "max_wattage".into(),
                rec_attribute: "wattage".into(),
                direction,
            })
        };
        assert!(recovers(&truth, &mk(Direction::Ge)));
        assert!(!recovers(&truth, &mk(Direction::Le)));
    }

    #[test]
    fn same_prompt_recovers_exact_match() {
        let truth = vec![
            PlantedRule::ExactMatch { attribute: "brand".into() },
            PlantedRule::Contain {
                attribute: "certification".into(),
                side: Side::Rec,
            },
        ];
        let prompt = |relation: &str, polarity| {
            accepted(RuleKind::Prompt(PromptRule {
                attribute: "brand".into(),
                relation: relation.into(),
                probability: 0.9,
                polarity,
                filled_text: String::new(),
                statement: String::new(),
                embedding: vec![1.0],
                source_pair: PairKey::new("a", "b"),
            }))
        };
        assert_eq!(planted_recovered(&truth, &[prompt("same", Polarity::Compatible)]), 1);
        assert_eq!(planted_recovered(&truth, &[prompt("different", Polarity::Compatible)]), 0);
        assert_eq!(planted_recovered(&truth, &[prompt("same", Polarity::NotCompatible)]), 0);
    }
}

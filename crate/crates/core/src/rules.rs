//! Labeling-rule types shared by rule discovery, annotation and matching.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::PairKey;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Anchor,
    Rec,
}

/// Direction of a range rule, read as `anchor_value <op> rec_value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Le,
    Ge,
}

impl Direction {
    pub fn holds(self, anchor: f64, rec: f64) -> bool {
        match self {
            Direction::Le => anchor <= rec,
            Direction::Ge => anchor >= rec,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Direction::Le => "<=",
            Direction::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Compatible,
    NotCompatible,
}

impl Polarity {
    pub fn phrase(self) -> &'static str {
        match self {
            Polarity::Compatible => "compatible",
            Polarity::NotCompatible => "not compatible",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleId(pub String);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RuleId {
    fn from(s: &str) -> Self {
        RuleId(s.to_owned())
    }
}

/// A prompt-based rule: the masked template filled for one large-error pair,
/// the relation token the language model predicted for the mask, and the
/// embedding used for matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRule {
    pub attribute: String,
    pub relation: String,
    pub probability: f64,
    pub polarity: Polarity,
    /// The full prompt with the mask filled.
    pub filled_text: String,
    /// The relation sentence with the mask filled; this is what gets embedded.
    pub statement: String,
    pub embedding: Vec<f64>,
    pub source_pair: PairKey,
}

/// Prototype of a candidate rule before annotation binds its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum CandidateKind {
    /// Equality of a shared attribute.
    ExactMatch { attribute: String },
    /// Inequality between a numerical anchor attribute and a numerical
    /// recommendation attribute; the direction is left to the annotator.
    Range {
        anchor_attribute: String,
        rec_attribute: String,
        direction: Option<Direction>,
    },
    /// Presence of an original (non-placeholder) value on one side.
    Contain { attribute: String, side: Side },
    Prompt(PromptRule),
}

impl CandidateKind {
    pub fn name(&self) -> &'static str {
        match self {
            CandidateKind::ExactMatch { .. } => "ExactMatch",
            CandidateKind::Range { .. } => "Range",
            CandidateKind::Contain { .. } => "Contain",
            CandidateKind::Prompt(_) => "Prompt",
        }
    }

    pub fn key(&self) -> RuleKey {
        match self {
            CandidateKind::ExactMatch { attribute } => RuleKey::ExactMatch(attribute.clone()),
            CandidateKind::Range {
                anchor_attribute,
                rec_attribute,
                ..
            } => RuleKey::Range(anchor_attribute.clone(), rec_attribute.clone()),
            CandidateKind::Contain { attribute, side } => RuleKey::Contain(attribute.clone(), *side),
            CandidateKind::Prompt(p) => {
                RuleKey::Prompt(p.attribute.clone(), p.relation.clone(), p.polarity)
            }
        }
    }

    /// Attribute names the rule reads.
    pub fn attributes(&self) -> Vec<&str> {
        match self {
            CandidateKind::ExactMatch { attribute } | CandidateKind::Contain { attribute, .. } => {
                vec![attribute]
            }
            CandidateKind::Range {
                anchor_attribute,
                rec_attribute,
                ..
            } => vec![anchor_attribute, rec_attribute],
            CandidateKind::Prompt(p) => vec![&p.attribute],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRule {
    pub id: RuleId,
    #[serde(flatten)]
    pub kind: CandidateKind,
    /// Permutation importance of the feature that triggered the rule.
    pub mu: f64,
    /// Encoding column that triggered the rule.
    pub feature: usize,
    pub iteration: usize,
}

/// A rule with every parameter bound, ready for matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum RuleKind {
    ExactMatch {
        attribute: String,
    },
    Range {
        anchor_attribute: String,
        rec_attribute: String,
        direction: Direction,
    },
    Contain {
        attribute: String,
        side: Side,
    },
    Prompt(PromptRule),
    /// Conjunction of attribute rules: satisfied iff every part is.
    And {
        parts: Vec<RuleKind>,
    },
}

impl RuleKind {
    pub fn is_prompt(&self) -> bool {
        matches!(self, RuleKind::Prompt(_))
    }

    pub fn key(&self) -> Option<RuleKey> {
        Some(match self {
            RuleKind::ExactMatch { attribute } => RuleKey::ExactMatch(attribute.clone()),
            RuleKind::Range {
                anchor_attribute,
                rec_attribute,
                ..
            } => RuleKey::Range(anchor_attribute.clone(), rec_attribute.clone()),
            RuleKind::Contain { attribute, side } => RuleKey::Contain(attribute.clone(), *side),
            RuleKind::Prompt(p) => RuleKey::Prompt(p.attribute.clone(), p.relation.clone(), p.polarity),
            RuleKind::And { .. } => return None,
        })
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleKind::ExactMatch { attribute } => write!(f, "{attribute} = {attribute}"),
            RuleKind::Range {
                anchor_attribute,
                rec_attribute,
                direction,
            } => write!(f, "{anchor_attribute} {} {rec_attribute}", direction.symbol()),
            RuleKind::Contain { attribute, side } => {
                let side = match side {
                    Side::Anchor => "anchor",
                    Side::Rec => "rec",
                };
                write!(f, "{side}.{attribute} present")
            }
            RuleKind::Prompt(p) => write!(f, "their {} are {}", p.attribute, p.relation),
            RuleKind::And { parts } => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" AND ")?;
                    }
                    write!(f, "({p})")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedRule {
    pub id: RuleId,
    #[serde(flatten)]
    pub kind: RuleKind,
    pub mu: f64,
    pub iteration: usize,
}

impl AcceptedRule {
    /// Composes attribute rules into one higher-order rule whose weight is the
    /// sum of the parts' weights. Prompt rules cannot be conjoined.
    pub fn conjoin(id: RuleId, parts: &[AcceptedRule]) -> Result<AcceptedRule> {
        if parts.len() < 2 {
            return Err(Error::Validation("a conjunction needs at least two rules".into()));
        }
        if parts.iter().any(|p| p.kind.is_prompt()) {
            return Err(Error::Validation("prompt rules cannot be conjoined".into()));
        }
        Ok(AcceptedRule {
            id,
            kind: RuleKind::And {
                parts: parts.iter().map(|p| p.kind.clone()).collect(),
            },
            mu: parts.iter().map(|p| p.mu).sum(),
            iteration: parts.iter().map(|p| p.iteration).max().unwrap_or(0),
        })
    }
}

/// Identity used to skip rules already seen in a run: kind plus attributes
/// (plus relation token and polarity for prompt rules).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleKey {
    ExactMatch(String),
    Range(String, String),
    Contain(String, Side),
    Prompt(String, String, Polarity),
}

/// Accepted and rejected rules of a whole run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleLedger {
    pub accepted: Vec<AcceptedRule>,
    pub rejected: Vec<CandidateRule>,
}

impl RuleLedger {
    pub fn seen(&self) -> BTreeSet<RuleKey> {
        self.accepted
            .iter()
            .filter_map(|r| r.kind.key())
            .chain(self.rejected.iter().map(|c| c.kind.key()))
            .collect()
    }

    pub fn record(&mut self, accepted: &[AcceptedRule], rejected: &[CandidateRule]) -> Result<()> {
        for r in accepted {
            if self.rejected.iter().any(|c| c.id == r.id) {
                return Err(Error::Conflict(format!("rule {} is already rejected", r.id)));
            }
        }
        for c in rejected {
            if self.accepted.iter().chain(accepted).any(|r| r.id == c.id) {
                return Err(Error::Conflict(format!("rule {} is already accepted", c.id)));
            }
        }
        for r in accepted {
            if !self.accepted.iter().any(|x| x.id == r.id) {
                self.accepted.push(r.clone());
            }
        }
        for c in rejected {
            if !self.rejected.iter().any(|x| x.id == c.id) {
                self.rejected.push(c.clone());
            }
        }
        Ok(())
    }
}

//! Rule-level annotation: sessions over one iteration's candidates, verdicts,
//! finalization into accepted rules, decisions files and the scripted
//! annotator.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{Label, PairKey, PlantedRule, Product};
use crate::error::{Error, Result};
use crate::rules::{AcceptedRule, CandidateKind, CandidateRule, Direction, Polarity, RuleId, RuleKind, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    ExactMatch,
    Range,
    Contain,
    /// Keep a prompt rule as generated.
    Accept,
    Abstain,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<Side>,
}

/// One line of a decisions file, and the body of a decision submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub rule_id: RuleId,
    pub verdict: VerdictKind,
    #[serde(default)]
    pub params: VerdictParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl Decision {
    pub fn new(rule_id: RuleId, verdict: VerdictKind, params: VerdictParams) -> Self {
        Decision {
            rule_id,
            verdict,
            params,
            annotator: None,
            timestamp: None,
        }
    }

    pub fn abstain(rule_id: RuleId) -> Self {
        Decision::new(rule_id, VerdictKind::Abstain, VerdictParams::default())
    }

    /// The part of a decision that determines the outcome.
    fn same_verdict(&self, other: &Decision) -> bool {
        self.verdict == other.verdict && self.params == other.params
    }
}

/// A labeled pair shown next to a candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub pair: PairKey,
    pub label: Label,
    pub weight: f64,
    pub anchor: Product,
    pub rec: Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionItem {
    pub rule: CandidateRule,
    pub examples: Vec<ExamplePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Open,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub iteration: usize,
    pub budget: usize,
    pub items: Vec<SessionItem>,
    pub decisions: BTreeMap<RuleId, Decision>,
    pub state: SessionState,
    #[serde(default)]
    pub accepted: Vec<AcceptedRule>,
    #[serde(default)]
    pub rejected: Vec<CandidateRule>,
}

impl AnnotationSession {
    /// Opens a session over at most `budget` candidates. A session without
    /// candidates is finalized immediately.
    pub fn open(iteration: usize, items: Vec<SessionItem>, budget: usize) -> Result<Self> {
        if items.len() > budget {
            return Err(Error::Validation(format!(
                "{} candidates exceed the annotation budget {budget}",
                items.len()
            )));
        }
        let mut ids = std::collections::BTreeSet::new();
        for it in &items {
            if !ids.insert(&it.rule.id) {
                return Err(Error::Validation(format!("duplicate candidate id {}", it.rule.id)));
            }
        }
        let state = if items.is_empty() {
            SessionState::Finalized
        } else {
            SessionState::Open
        };
        Ok(AnnotationSession {
            iteration,
            budget,
            items,
            decisions: BTreeMap::new(),
            state,
            accepted: Vec::new(),
            rejected: Vec::new(),
        })
    }

    pub fn is_open(&self) -> bool {
        self.state == SessionState::Open
    }

    pub fn item(&self, id: &RuleId) -> Option<&SessionItem> {
        self.items.iter().find(|i| &i.rule.id == id)
    }

    pub fn pending(&self) -> Vec<&RuleId> {
        self.items
            .iter()
            .map(|i| &i.rule.id)
            .filter(|id| !self.decisions.contains_key(*id))
            .collect()
    }

    /// Records a decision. Resubmitting the same verdict is a no-op (returns
    /// `false`); a different verdict for a decided rule is a conflict.
    pub fn submit(&mut self, decision: Decision) -> Result<bool> {
        let item = self
            .item(&decision.rule_id)
            .ok_or_else(|| Error::NotFound(format!("rule {} is not in this session", decision.rule_id)))?;
        bind(&item.rule, &decision)?;
        if let Some(prev) = self.decisions.get(&decision.rule_id) {
            if prev.same_verdict(&decision) {
                return Ok(false);
            }
            return Err(Error::Conflict(format!("rule {} is already decided", decision.rule_id)));
        }
        if !self.is_open() {
            return Err(Error::Conflict("session is finalized".into()));
        }
        self.decisions.insert(decision.rule_id.clone(), decision);
        Ok(true)
    }

    /// Binds every decided candidate. Idempotent: a finalized session returns
    /// the rules it was finalized with.
    pub fn finalize(&mut self) -> Result<Vec<AcceptedRule>> {
        if !self.is_open() {
            return Ok(self.accepted.clone());
        }
        let pending = self.pending().len();
        if pending > 0 {
            return Err(Error::IncompleteSession { pending });
        }
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        for it in &self.items {
            match bind(&it.rule, &self.decisions[&it.rule.id])? {
                Some(kind) => accepted.push(AcceptedRule {
                    id: it.rule.id.clone(),
                    kind,
                    mu: it.rule.mu,
                    iteration: it.rule.iteration,
                }),
                None => rejected.push(it.rule.clone()),
            }
        }
        self.accepted = accepted;
        self.rejected = rejected;
        self.state = SessionState::Finalized;
        Ok(self.accepted.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Checks that a verdict fits the candidate's prototype and returns the bound
/// rule (`None` for an abstain).
pub fn bind(rule: &CandidateRule, d: &Decision) -> Result<Option<RuleKind>> {
    let mismatch = || {
        Err(Error::Validation(format!(
            "{:?} verdict does not apply to a {} candidate",
            d.verdict,
            rule.kind.name()
        )))
    };
    Ok(Some(match (&rule.kind, d.verdict) {
        (_, VerdictKind::Abstain) => return Ok(None),
        (CandidateKind::ExactMatch { attribute }, VerdictKind::ExactMatch) => RuleKind::ExactMatch {
            attribute: attribute.clone(),
        },
        (
            CandidateKind::Range {
                anchor_attribute,
                rec_attribute,
                direction,
            },
            VerdictKind::Range,
        ) => {
            let Some(dir) = d.params.direction.or(*direction) else {
                return Err(Error::Validation("a Range verdict needs a direction".into()));
            };
            RuleKind::Range {
                anchor_attribute: anchor_attribute.clone(),
                rec_attribute: rec_attribute.clone(),
                direction: dir,
            }
        }
        (CandidateKind::Contain { attribute, side }, VerdictKind::Contain) => RuleKind::Contain {
            attribute: attribute.clone(),
            side: d.params.side.unwrap_or(*side),
        },
        (CandidateKind::Prompt(p), VerdictKind::Accept) => RuleKind::Prompt(p.clone()),
        _ => return mismatch(),
    }))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::file(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}

pub fn load_decisions(path: impl AsRef<Path>) -> Result<Vec<Decision>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn append_decisions(path: impl AsRef<Path>, decisions: &[Decision]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::file(path, e))?;
    for d in decisions {
        let line = serde_json::to_string(d)?;
        writeln!(f, "{line}").map_err(|e| Error::file(path, e))?;
    }
    Ok(())
}

/// Stands in for a domain expert: accepts a candidate iff it matches a
/// ground-truth rule (taking the true direction for ranges and the true side
/// for containment) and abstains otherwise. A prompt candidate matches an
/// exact-match truth rule on its attribute when it states the values are the
/// same for a compatible pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAnnotator {
    pub truth: Vec<PlantedRule>,
}

impl ScriptedAnnotator {
    pub fn new(truth: Vec<PlantedRule>) -> Self {
        ScriptedAnnotator { truth }
    }

    pub fn decide(&self, rule: &CandidateRule) -> Decision {
        let verdict = self.truth.iter().find_map(|t| match (&rule.kind, t) {
            (CandidateKind::ExactMatch { attribute }, PlantedRule::ExactMatch { attribute: a }) if attribute == a => {
                Some((VerdictKind::ExactMatch, VerdictParams::default()))
            }
            (
                CandidateKind::Range {
                    anchor_attribute,
                    rec_attribute,
                    ..
                },
                PlantedRule::Range {
                    anchor_attribute: ta,
                    rec_attribute: tr,
                    direction,
                },
            ) if anchor_attribute == ta && rec_attribute == tr => Some((
                VerdictKind::Range,
                VerdictParams {
                    direction: Some(*direction),
                    side: None,
                },
            )),
            (CandidateKind::Contain { attribute, side }, PlantedRule::Contain { attribute: a, side: s })
                if attribute == a && side == s =>
            {
                Some((
                    VerdictKind::Contain,
                    VerdictParams {
                        direction: None,
                        side: Some(*s),
                    },
                ))
            }
            (CandidateKind::Prompt(p), PlantedRule::ExactMatch { attribute: a })
                if &p.attribute == a && p.relation == "same" && p.polarity == Polarity::Compatible =>
            {
                Some((VerdictKind::Accept, VerdictParams::default()))
            }
            _ => None,
        });
        let mut d = match verdict {
            Some((v, params)) => Decision::new(rule.id.clone(), v, params),
            None => Decision::abstain(rule.id.clone()),
        };
        d.annotator = Some("scripted".into());
        d
    }
}

/// Where an iteration's decisions come from.
pub trait Annotator {
    fn decide(&mut self, session: &AnnotationSession) -> Result<Vec<Decision>>;
}

impl Annotator for ScriptedAnnotator {
    fn decide(&mut self, session: &AnnotationSession) -> Result<Vec<Decision>> {
        Ok(session.items.iter().map(|i| ScriptedAnnotator::decide(self, &i.rule)).collect())
    }
}

/// Replays a decisions file; every candidate of a session must have a line.
#[derive(Debug, Clone, Default)]
pub struct DecisionReplay {
    pub decisions: BTreeMap<RuleId, Decision>,
}

impl DecisionReplay {
    pub fn new(decisions: Vec<Decision>) -> Self {
        DecisionReplay {
            decisions: decisions.into_iter().map(|d| (d.rule_id.clone(), d)).collect(),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(DecisionReplay::new(load_decisions(path)?))
    }
}

impl Annotator for DecisionReplay {
    fn decide(&mut self, session: &AnnotationSession) -> Result<Vec<Decision>> {
        let missing = session
            .items
            .iter()
            .filter(|i| !self.decisions.contains_key(&i.rule.id))
            .count();
        if missing > 0 {
            return Err(Error::IncompleteSession { pending: missing });
        }
        Ok(session
            .items
            .iter()
            .map(|i| self.decisions[&i.rule.id].clone())
            .collect())
    }
}

//! Scoring unlabeled pairs against accepted rules and minting weak positives.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{LabeledPair, PairKey, Product};
use crate::error::{Error, Result};
use crate::featurize::{EncodingLayout, PairEncoding, Provenance};
use crate::prompt_rules::{cosine, predict_mask, relation_statement, LmClient, PromptBuilder};
use crate::rules::{AcceptedRule, Polarity, PromptRule, RuleId, RuleKind, Side};

/// Hard match of an attribute rule against a raw pair encoding. Any value the
/// rule needs that is masked (or absent from the layout) fails the match.
pub fn tree_rule_satisfied(kind: &RuleKind, layout: &EncodingLayout, enc: &PairEncoding) -> bool {
    let cell = |prov, attr: &str| layout.column(prov, attr).and_then(|c| enc.get(c));
    match kind {
        RuleKind::ExactMatch { attribute } => cell(Provenance::SharedDiff, attribute) == Some(0.0),
        RuleKind::Range {
            anchor_attribute,
            rec_attribute,
            direction,
        } => match (cell(Provenance::Anchor, anchor_attribute), cell(Provenance::Rec, rec_attribute)) {
            (Some(a), Some(b)) => direction.holds(a, b),
            _ => false,
        },
        RuleKind::Contain { attribute, side } => {
            let prov = match side {
                Side::Anchor => Provenance::Anchor,
                Side::Rec => Provenance::Rec,
            };
            cell(prov, attribute).is_some()
        }
        RuleKind::And { parts } => parts.iter().all(|p| tree_rule_satisfied(p, layout, enc)),
        RuleKind::Prompt(_) => false,
    }
}

pub fn score_tree_rule(rule: &AcceptedRule, layout: &EncodingLayout, enc: &PairEncoding) -> f64 {
    if tree_rule_satisfied(&rule.kind, layout, enc) {
        rule.mu
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleComponent {
    pub rule_id: RuleId,
    pub tree: f64,
    pub prompt: f64,
    /// Clamped cosine for prompt rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub pair: PairKey,
    pub components: Vec<RuleComponent>,
    pub total: f64,
    pub normalized: f64,
}

/// Scores pairs against a rule set. Prompt-rule scoring asks the client for
/// the unlabeled pair's mask (with the "compatible" polarity) and embeds the
/// resulting statement; statement embeddings are cached.
pub struct Matcher<'a, C: LmClient> {
    pub layout: &'a EncodingLayout,
    pub client: &'a C,
    pub builder: &'a PromptBuilder,
    cache: HashMap<String, Vec<f64>>,
    /// Prompt scores dropped to 0 after transport failures.
    pub degraded: usize,
}

impl<'a, C: LmClient> Matcher<'a, C> {
    pub fn new(layout: &'a EncodingLayout, client: &'a C, builder: &'a PromptBuilder) -> Self {
        Matcher {
            layout,
            client,
            builder,
            cache: HashMap::new(),
            degraded: 0,
        }
    }

    fn embed(&mut self, text: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.cache.get(text) {
            return Ok(v.clone());
        }
        let v = self.client.embed(text)?;
        self.cache.insert(text.to_owned(), v.clone());
        Ok(v)
    }

    /// Clamped cosine between the pair's statement for the rule's attribute
    /// and the rule's statement; `None` when the pair has no usable prompt.
    pub fn prompt_cosine(&mut self, rule: &PromptRule, anchor: &Product, rec: &Product) -> Result<Option<f64>> {
        let prompt = match self.builder.build(anchor, rec, &rule.attribute, Polarity::Compatible) {
            Ok(p) => p,
            Err(Error::PromptUnavailable(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let attempt = predict_mask(self.client, &prompt).and_then(|(token, _)| {
            let statement = relation_statement(&rule.attribute, &token);
            self.embed(&statement)
        });
        match attempt {
            Ok(e) => Ok(Some(cosine(&e, &rule.embedding).clamp(0.0, 1.0))),
            Err(e) if e.is_retryable() => {
                log::warn!("prompt score for {}::{} dropped to 0: {e}", anchor.id, rec.id);
                self.degraded += 1;
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    pub fn score_prompt_rule(&mut self, rule: &AcceptedRule, anchor: &Product, rec: &Product) -> Result<f64> {
        match &rule.kind {
            RuleKind::Prompt(p) => Ok(self.prompt_cosine(p, anchor, rec)?.map_or(0.0, |c| rule.mu * c)),
            _ => Ok(0.0),
        }
    }

    /// Sums the per-rule components in rule order. Each rule contributes only
    /// its own kind's term.
    pub fn score_pair(
        &mut self,
        rules: &[AcceptedRule],
        pair: &PairKey,
        anchor: &Product,
        rec: &Product,
        enc: &PairEncoding,
    ) -> Result<MatchScore> {
        let mut components = Vec::with_capacity(rules.len());
        for r in rules {
            let c = match &r.kind {
                RuleKind::Prompt(p) => {
                    let cos = self.prompt_cosine(p, anchor, rec)?;
                    RuleComponent {
                        rule_id: r.id.clone(),
                        tree: 0.0,
                        prompt: cos.map_or(0.0, |c| r.mu * c),
                        cosine: cos,
                    }
                }
                _ => RuleComponent {
                    rule_id: r.id.clone(),
                    tree: score_tree_rule(r, self.layout, enc),
                    prompt: 0.0,
                    cosine: None,
                },
            };
            components.push(c);
        }
        Ok(finish(pair.clone(), components, rules))
    }
}

fn finish(pair: PairKey, components: Vec<RuleComponent>, rules: &[AcceptedRule]) -> MatchScore {
    let mut total = 0.0;
    for c in &components {
        total += c.tree + c.prompt;
    }
    let mass: f64 = rules.iter().map(|r| r.mu).sum();
    MatchScore {
        pair,
        components,
        total,
        normalized: if mass > 0.0 { total / mass } else { 0.0 },
    }
}

/// Pairs whose normalized score reaches `theta`, best first (ties by pair
/// key), at most `cap` of them, as weak positives of `iteration`.
pub fn assign_weak_labels(scores: &[MatchScore], theta: f64, cap: usize, iteration: usize) -> Result<Vec<LabeledPair>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Config(format!("match threshold must be in (0, 1], got {theta}")));
    }
    Ok(select_matches(scores, theta, cap)
        .into_iter()
        .map(|s| LabeledPair::minted(s.pair.clone(), iteration))
        .collect())
}

/// The scores that would be minted, in minting order.
pub fn select_matches(scores: &[MatchScore], theta: f64, cap: usize) -> Vec<&MatchScore> {
    let mut hits: Vec<&MatchScore> = scores.iter().filter(|s| s.normalized >= theta).collect();
    hits.sort_by(|a, b| b.normalized.total_cmp(&a.normalized).then_with(|| a.pair.cmp(&b.pair)));
    hits.truncate(cap);
    if hits.is_empty() {
        log::info!("no pair reached the match threshold {theta}");
    }
    hits
}

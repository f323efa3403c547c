//! Gini decision trees over the large-error instances, permutation
//! importance, and the mapping from important features to rule prototypes.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{AttributeKind, Label};
use crate::error::{Error, Result};
use crate::featurize::{EncodingLayout, PairEncoder, PairEncoding, Provenance};
use crate::learner::MlpModel;
use crate::rules::{CandidateKind, CandidateRule, RuleId, RuleKey, Side};

pub const MIN_DEPTH: usize = 3;
pub const MAX_DEPTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// `x <= threshold` goes left.
        left: usize,
        right: usize,
        /// Where rows with the feature masked go.
        missing_left: bool,
    },
    Leaf {
        positives: usize,
        negatives: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    /// Nodes in creation order; index 0 is the root.
    pub nodes: Vec<Node>,
    pub max_depth: usize,
}

impl DecisionTree {
    pub fn predict(&self, enc: &PairEncoding) -> Label {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf {
                    positives,
                    negatives,
                } => {
                    return if positives >= negatives {
                        Label::Positive
                    } else {
                        Label::Negative
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    missing_left,
                } => {
                    let go_left = if enc.mask[*feature] {
                        enc.values[*feature] <= *threshold
                    } else {
                        *missing_left
                    };
                    at = if go_left { *left } else { *right };
                }
            }
        }
    }

    /// Number of split levels on the deepest path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn split_features(&self) -> BTreeSet<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect()
    }
}

fn gini(pos: usize, neg: usize) -> f64 {
    let n = (pos + neg) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = pos as f64 / n;
    2.0 * p * (1.0 - p)
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
    missing_left: bool,
}

/// Greedy Gini tree. Candidate thresholds are midpoints between consecutive
/// distinct present values; a split's impurity is measured on the rows where
/// the feature is present (the gain is scaled by the present fraction), and
/// masked rows follow the child that received more
/// present rows. The seed fixes the order in which features are tried, which
/// decides ties between equally good splits.
pub fn fit_tree(subset: &[(PairEncoding, Label)], depth: usize, seed: u64) -> Result<DecisionTree> {
    if subset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(MIN_DEPTH..=MAX_DEPTH).contains(&depth) {
        return Err(Error::Config(format!(
            "tree depth must be within [{MIN_DEPTH}, {MAX_DEPTH}], got {depth}"
        )));
    }
    let dim = subset[0].0.len();
    let mut order: Vec<usize> = (0..dim).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tree = DecisionTree {
        nodes: Vec::new(),
        max_depth: depth,
    };
    let rows: Vec<usize> = (0..subset.len()).collect();
    grow(&mut tree, subset, rows, 0, &order);
    Ok(tree)
}

fn grow(tree: &mut DecisionTree, data: &[(PairEncoding, Label)], rows: Vec<usize>, depth: usize, order: &[usize]) -> usize {
    let pos = rows.iter().filter(|&&r| data[r].1 == Label::Positive).count();
    let neg = rows.len() - pos;
    let id = tree.nodes.len();
    tree.nodes.push(Node::Leaf {
        positives: pos,
        negatives: neg,
    });
    if depth >= tree.max_depth || pos == 0 || neg == 0 {
        return id;
    }
    let Some(best) = best_split(data, &rows, order) else {
        return id;
    };
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for &r in &rows {
        let enc = &data[r].0;
        let go_left = if enc.mask[best.feature] {
            enc.values[best.feature] <= best.threshold
        } else {
            best.missing_left
        };
        if go_left {
            left.push(r);
        } else {
            right.push(r);
        }
    }
    let l = grow(tree, data, left, depth + 1, order);
    let r = grow(tree, data, right, depth + 1, order);
    tree.nodes[id] = Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        left: l,
        right: r,
        missing_left: best.missing_left,
    };
    id
}

fn best_split(data: &[(PairEncoding, Label)], rows: &[usize], order: &[usize]) -> Option<SplitChoice> {
    let mut best: Option<SplitChoice> = None;
    let mut present: Vec<(f64, bool)> = Vec::with_capacity(rows.len());
    for &f in order {
        present.clear();
        present.extend(
            rows.iter()
                .filter(|&&r| data[r].0.mask[f])
                .map(|&r| (data[r].0.values[f], data[r].1 == Label::Positive)),
        );
        if present.len() < 2 {
            continue;
        }
        present.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total_pos = present.iter().filter(|p| p.1).count();
        let n = present.len();
        let parent = gini(total_pos, n - total_pos);
        let mut lp = 0;
        for i in 0..n - 1 {
            if present[i].1 {
                lp += 1;
            }
            if present[i].0 == present[i + 1].0 {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            let rp = total_pos - lp;
            let child = (nl as f64 * gini(lp, nl - lp) + nr as f64 * gini(rp, nr - rp)) / n as f64;
            // scaled by the present fraction so sparse columns do not win on
            // a handful of rows
            let gain = (parent - child) * n as f64 / rows.len() as f64;
            if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain + 1e-15) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: 0.5 * (present[i].0 + present[i + 1].0),
                    gain,
                    missing_left: nl >= nr,
                });
            }
        }
    }
    best
}

/// Anything that labels a raw pair encoding.
pub trait Evaluator {
    fn evaluate(&self, enc: &PairEncoding) -> Label;
}

impl Evaluator for DecisionTree {
    fn evaluate(&self, enc: &PairEncoding) -> Label {
        self.predict(enc)
    }
}

/// The weak MLP seen through the encoder's standardization.
pub struct MlpEvaluator<'a> {
    pub model: &'a MlpModel,
    pub encoder: &'a PairEncoder,
}

impl Evaluator for MlpEvaluator<'_> {
    fn evaluate(&self, enc: &PairEncoding) -> Label {
        self.model
            .predict(&self.encoder.model_input(enc))
            .map(|(l, _)| l)
            .unwrap_or(Label::Positive)
    }
}

/// Row permutations for every (feature, repeat), drawn feature-major from one
/// seeded generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub seed: u64,
    pub repeats: usize,
    /// `perms[feature][k][row]` = source row whose cell lands in `row`.
    pub perms: Vec<Vec<Vec<usize>>>,
}

impl PermutationPlan {
    pub fn new(n_rows: usize, n_features: usize, repeats: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perms = (0..n_features)
            .map(|_| {
                (0..repeats)
                    .map(|_| {
                        let mut p: Vec<usize> = (0..n_rows).collect();
                        p.shuffle(&mut rng);
                        p
                    })
                    .collect()
            })
            .collect();
        PermutationPlan {
            seed,
            repeats,
            perms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: usize,
    pub mu: f64,
    pub repeats: usize,
    /// Correct predictions on the untouched subset.
    pub baseline_correct: usize,
    /// Correct predictions per repeat with the column permuted.
    pub permuted_correct: Vec<usize>,
    /// Accuracy per repeat.
    pub scores: Vec<f64>,
}

/// Accuracy drop from shuffling each column (value and mask move together),
/// averaged over the plan's repeats. `mu` is computed from integer counts as
/// `(K * c0 - sum c_k) / (K * n)`, so features that cannot change any
/// prediction get exactly 0.
pub fn permutation_importance(
    evaluator: &impl Evaluator,
    subset: &[(PairEncoding, Label)],
    plan: &PermutationPlan,
) -> Result<Vec<FeatureImportance>> {
    if subset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if plan.repeats == 0 {
        return Err(Error::Config("permutation repeats must be at least 1".into()));
    }
    let n = subset.len();
    let correct = |encs: &mut dyn Iterator<Item = (Label, Label)>| encs.filter(|(p, y)| p == y).count();
    let c0 = correct(&mut subset.iter().map(|(e, y)| (evaluator.evaluate(e), *y)));
    let mut out = Vec::with_capacity(plan.perms.len());
    let mut scratch: Vec<PairEncoding> = subset.iter().map(|(e, _)| e.clone()).collect();
    for (feature, reps) in plan.perms.iter().enumerate() {
        let mut counts = Vec::with_capacity(reps.len());
        for perm in reps {
            if perm.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    got: perm.len(),
                });
            }
            for (row, &src) in perm.iter().enumerate() {
                scratch[row].values[feature] = subset[src].0.values[feature];
                scratch[row].mask[feature] = subset[src].0.mask[feature];
            }
            counts.push(correct(
                &mut scratch.iter().zip(subset).map(|(e, (_, y))| (evaluator.evaluate(e), *y)),
            ));
            for (row, s) in scratch.iter_mut().enumerate() {
                s.values[feature] = subset[row].0.values[feature];
                s.mask[feature] = subset[row].0.mask[feature];
            }
        }
        let k = counts.len();
        let drop = (k * c0) as i64 - counts.iter().sum::<usize>() as i64;
        out.push(FeatureImportance {
            feature,
            mu: drop as f64 / (k * n) as f64,
            repeats: k,
            baseline_correct: c0,
            permuted_correct: counts.clone(),
            scores: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        });
    }
    Ok(out)
}

/// Which views may produce candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalViews {
    Both,
    AttributesOnly,
    DescriptionOnly,
}

/// Output of feature-to-prototype mapping: an attribute rule ready for
/// annotation, or a sparse attribute handed to the prompt generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "proposal", rename_all = "snake_case")]
pub enum Proposal {
    Tree(CandidateRule),
    Prompt {
        attribute: String,
        feature: usize,
        mu: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ProposalConfig {
    pub budget: usize,
    pub sparse_threshold: f64,
    pub views: ProposalViews,
    pub iteration: usize,
}

/// Hands out run-unique rule ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleIdAllocator {
    pub next: usize,
}

impl RuleIdAllocator {
    pub fn allocate(&mut self, iteration: usize) -> RuleId {
        self.next += 1;
        RuleId(format!("t{iteration:02}-r{:04}", self.next))
    }
}

/// Ranks features by importance (ties by column index), keeps those with
/// positive importance, and maps the top ones to prototypes: a shared-diff
/// categorical column becomes an exact match, numerical columns become a range
/// against the most important numerical column of the other side (or over the
/// shared attribute itself), other single-side columns become a containment
/// rule, and sparse attributes go to the prompt generator. Prototypes already
/// in `seen` or produced earlier in the same call are skipped.
pub fn propose_tree_rules(
    importances: &[FeatureImportance],
    layout: &EncodingLayout,
    sparsity: &[f64],
    seen: &BTreeSet<RuleKey>,
    cfg: &ProposalConfig,
    ids: &mut RuleIdAllocator,
) -> Vec<Proposal> {
    let mut ranked: Vec<&FeatureImportance> = importances.iter().filter(|f| f.mu > 0.0).collect();
    ranked.sort_by(|a, b| b.mu.total_cmp(&a.mu).then(a.feature.cmp(&b.feature)));

    let partner = |side: Provenance| {
        ranked
            .iter()
            .map(|f| layout.descriptor(f.feature))
            .find(|d| d.provenance == side && d.kind == AttributeKind::Numerical)
            .map(|d| d.attribute_name.clone())
    };

    let mut out = Vec::new();
    let mut taken_keys: BTreeSet<RuleKey> = BTreeSet::new();
    let mut taken_prompts: BTreeSet<String> = BTreeSet::new();
    for f in &ranked {
        if out.len() >= cfg.budget {
            break;
        }
        let d = layout.descriptor(f.feature);
        let sparse = sparsity.get(f.feature).copied().unwrap_or(0.0) >= cfg.sparse_threshold;
        let to_prompt = match cfg.views {
            ProposalViews::Both => sparse,
            ProposalViews::AttributesOnly => false,
            ProposalViews::DescriptionOnly => true,
        };
        if to_prompt {
            if taken_prompts.insert(d.attribute_name.clone()) {
                out.push(Proposal::Prompt {
                    attribute: d.attribute_name.clone(),
                    feature: f.feature,
                    mu: f.mu,
                });
            }
            continue;
        }
        let kind = match (d.provenance, d.kind) {
            (Provenance::SharedDiff, AttributeKind::Categorical) => CandidateKind::ExactMatch {
                attribute: d.attribute_name.clone(),
            },
            (Provenance::SharedDiff, AttributeKind::Numerical) => CandidateKind::Range {
                anchor_attribute: d.attribute_name.clone(),
                rec_attribute: d.attribute_name.clone(),
                direction: None,
            },
            (Provenance::Anchor, AttributeKind::Numerical) => match partner(Provenance::Rec) {
                Some(rec) => CandidateKind::Range {
                    anchor_attribute: d.attribute_name.clone(),
                    rec_attribute: rec,
                    direction: None,
                },
                None => contain(&d.attribute_name, Side::Anchor),
            },
            (Provenance::Rec, AttributeKind::Numerical) => match partner(Provenance::Anchor) {
                Some(anchor) => CandidateKind::Range {
                    anchor_attribute: anchor,
                    rec_attribute: d.attribute_name.clone(),
                    direction: None,
                },
                None => contain(&d.attribute_name, Side::Rec),
            },
            (Provenance::Anchor, AttributeKind::Categorical) => contain(&d.attribute_name, Side::Anchor),
            (Provenance::Rec, AttributeKind::Categorical) => contain(&d.attribute_name, Side::Rec),
        };
        let key = kind.key();
        if seen.contains(&key) || !taken_keys.insert(key) {
            continue;
        }
        out.push(Proposal::Tree(CandidateRule {
            id: ids.allocate(cfg.iteration),
            kind,
            mu: f.mu,
            feature: f.feature,
            iteration: cfg.iteration,
        }));
    }
    if out.len() < cfg.budget {
        log::warn!(
            "only {} usable features for a budget of {} in iteration {}",
            out.len(),
            cfg.budget,
            cfg.iteration
        );
    }
    out
}

fn contain(attribute: &str, side: Side) -> CandidateKind {
    CandidateKind::Contain {
        attribute: attribute.to_owned(),
        side,
    }
}

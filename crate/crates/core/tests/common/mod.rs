//! Brute-force recomputations shared by the oracle tests and the acceptance
//! report. Each check returns a verdict instead of panicking so the report can
//! print every line.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use amrule_core::boosting::{
    model_coefficient, select_large_error, update_weights, weighted_error, BoostState, Classifier, EnsembleModel,
};
use amrule_core::catalog::{AttributeKind, Label, PairKey, Product};
use amrule_core::featurize::{EncodingLayout, FeatureDescriptor, PairEncoding, Provenance};
use amrule_core::learner::{train_weak_model, MlpModel, TrainConfig};
use amrule_core::matching::Matcher;
use amrule_core::prompt_rules::{FillMaskResponse, LmClient, PromptBuilder};
use amrule_core::rules::{AcceptedRule, Direction, Polarity, PromptRule, RuleId, RuleKind, Side};
use amrule_core::tree_rules::{fit_tree, permutation_importance, PermutationPlan};
use amrule_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: usize = 1000;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "{} {}: {} ({:.2?})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed
        )
    }
}

fn timed(name: &str, budget: Duration, f: impl FnOnce() -> std::result::Result<String, String>) -> Check {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match out {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if elapsed > budget {
        pass = false;
        detail = format!("{detail}; over the {budget:?} budget");
    }
    Check {
        name: name.into(),
        pass,
        detail,
        elapsed,
    }
}

fn label(rng: &mut impl Rng) -> Label {
    if rng.gen_bool(0.5) {
        Label::Positive
    } else {
        Label::Negative
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

// ---------------------------------------------------------------- boosting

pub fn weighted_error_oracle(seed: u64) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..INSTANCES {
        let n = rng.gen_range(1..200);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-6..10.0)).collect();
        let p: Vec<Label> = (0..n).map(|_| label(&mut rng)).collect();
        let y: Vec<Label> = (0..n).map(|_| label(&mut rng)).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            den += w[i];
            if p[i] != y[i] {
                num += w[i];
            }
        }
        let expected = num / den;
        let got = weighted_error(&w, &p, &y).map_err(|e| e.to_string())?;
        if !close(got.raw, expected, 1e-12) {
            return Err(format!("case {case}: err {} vs {expected}", got.raw));
        }
        let clipped = expected.max(1e-8).min(1.0 - 1e-8);
        if !close(got.clipped, clipped, 1e-12) {
            return Err(format!("case {case}: clipped err {} vs {clipped}", got.clipped));
        }
        if num == 0.0 && got.raw != 0.0 {
            return Err(format!("case {case}: error-free predictions give err {}", got.raw));
        }
    }
    Ok(format!("{INSTANCES} instances"))
}

pub fn model_coefficient_oracle(seed: u64) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..INSTANCES {
        let err: f64 = match case {
            0 => 1e-8,
            1 => 1.0 - 1e-8,
            2 => 0.5,
            _ => rng.gen_range(1e-8..1.0 - 1e-8),
        };
        let expected = (1.0 - err).ln() - err.ln();
        let got = model_coefficient(err);
        if !close(got, expected, 1e-12) {
            return Err(format!("err {err}: alpha {got} vs {expected}"));
        }
        if (err < 0.5) != (got > 0.0) && err != 0.5 {
            return Err(format!("err {err}: alpha {got} has the wrong sign"));
        }
    }
    Ok(format!("{INSTANCES} instances"))
}

pub fn update_weights_oracle(seed: u64) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..INSTANCES {
        let n = rng.gen_range(1..200);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-6..10.0)).collect();
        let p: Vec<Label> = (0..n).map(|_| label(&mut rng)).collect();
        let y: Vec<Label> = (0..n).map(|_| label(&mut rng)).collect();
        let alpha = rng.gen_range(-5.0..20.0);
        let mut got = w.clone();
        update_weights(&mut got, &p, &y, alpha).map_err(|e| e.to_string())?;
        for i in 0..n {
            let indicator = if p[i] == y[i] { 0.0 } else { 1.0 };
            let expected = w[i] * (alpha * indicator).exp();
            // correct instances keep their weight bit for bit
            if indicator == 0.0 && got[i] != w[i] {
                return Err(format!("case {case}: correct instance {i} changed"));
            }
            if !close(got[i], expected, 1e-12) {
                return Err(format!("case {case}: w[{i}] {} vs {expected}", got[i]));
            }
        }
    }
    Ok(format!("{INSTANCES} instances"))
}

pub fn select_large_error_oracle(seed: u64) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..INSTANCES {
        let n = rng.gen_range(1..120);
        // few distinct values so ties are common
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 * 0.25 + 0.1).collect();
        let k = rng.gen_range(0..n + 10);
        // rank by counting how many instances come strictly before
        let mut ranked: Vec<(usize, usize)> = (0..n)
            .map(|i| {
                let before = (0..n)
                    .filter(|&j| w[j] > w[i] || (w[j] == w[i] && j < i))
                    .count();
                (before, i)
            })
            .collect();
        ranked.sort();
        let expected: Vec<usize> = ranked.into_iter().take(k.min(n)).map(|(_, i)| i).collect();
        let got = select_large_error(&w, k);
        if got != expected {
            return Err(format!("case {case}: {got:?} vs {expected:?}"));
        }
    }
    Ok(format!("{INSTANCES} instances"))
}

struct Stump {
    feature: usize,
    threshold: f64,
    flip: bool,
}

impl Classifier for Stump {
    fn classify(&self, x: &[f64]) -> Label {
        if (x[self.feature] > self.threshold) != self.flip {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

pub fn ensemble_oracle(seed: u64) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..INSTANCES {
        let d = 4;
        let m = rng.gen_range(1..8);
        let mut ensemble = EnsembleModel::default();
        let mut members = Vec::new();
        for _ in 0..m {
            let s = (rng.gen_range(0..d), rng.gen_range(-1.0..1.0), rng.gen_bool(0.5));
            let alpha = rng.gen_range(-2.0..5.0);
            members.push((s, alpha));
            ensemble.push(
                Stump {
                    feature: s.0,
                    threshold: s.1,
                    flip: s.2,
                },
                alpha,
            );
        }
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vote = |k: usize| {
            let mut s = 0.0;
            for &((f, t, flip), a) in &members[..k] {
                let positive = (x[f] > t) != flip;
                s += if positive { a } else { -a };
            }
            if s >= 0.0 {
                Label::Positive
            } else {
                Label::Negative
            }
        };
        let got = ensemble.predict(&x).map_err(|e| e.to_string())?;
        if got != vote(m) {
            return Err(format!("case {case}: ensemble {got:?} vs {:?}", vote(m)));
        }
        for k in 1..=m {
            if ensemble.predict_prefix(&x, k).map_err(|e| e.to_string())? != vote(k) {
                return Err(format!("case {case}: prefix {k} disagrees"));
            }
        }
    }
    Ok(format!("{INSTANCES} instances"))
}

// ---------------------------------------------------------------- matching

const ATTRS: [&str; 4] = ["finish", "size", "wattage", "color"];
const TOKENS: [&str; 3] = ["same", "different", "other"];

/// Fill-mask picks the token indexed by the number of `alpha` words in the
/// prompt; embeddings come from a fixed table keyed by the statement's last
/// word.
struct CountingLm {
    table: BTreeMap<String, Vec<f64>>,
}

impl CountingLm {
    fn new(rng: &mut impl Rng) -> Self {
        let table = TOKENS
            .iter()
            .map(|t| (t.to_string(), (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        CountingLm { table }
    }
}

fn alpha_count(text: &str) -> usize {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| *w == "alpha").count()
}

impl LmClient for CountingLm {
    fn fill_mask(&self, prompt: &str) -> Result<FillMaskResponse> {
        let hit = alpha_count(prompt) % TOKENS.len();
        Ok(FillMaskResponse {
            tokens: TOKENS.iter().map(|s| s.to_string()).collect(),
            probs: (0..TOKENS.len()).map(|i| if i == hit { 0.8 } else { 0.1 }).collect(),
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let last = text.split_whitespace().last().unwrap_or_default();
        Ok(self.table[last].clone())
    }
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    (dot / (na.sqrt() * nb.sqrt())).max(0.0).min(1.0)
}

fn random_layout() -> EncodingLayout {
    let mut descriptors = Vec::new();
    for prov in [Provenance::Anchor, Provenance::Rec, Provenance::SharedDiff] {
        for (i, a) in ATTRS.iter().enumerate() {
            descriptors.push(FeatureDescriptor {
                index: descriptors.len(),
                attribute_name: a.to_string(),
                provenance: prov,
                kind: if i % 2 == 0 {
                    AttributeKind::Categorical
                } else {
                    AttributeKind::Numerical
                },
            });
        }
    }
    EncodingLayout::new(descriptors)
}

/// Column of `(provenance, attribute)` in [`random_layout`].
fn col(prov: Provenance, attr: &str) -> usize {
    let p = match prov {
        Provenance::Anchor => 0,
        Provenance::Rec => 1,
        Provenance::SharedDiff => 2,
    };
    p * ATTRS.len() + ATTRS.iter().position(|a| *a == attr).unwrap()
}

fn random_kind(rng: &mut impl Rng, depth: usize) -> RuleKind {
    let attr = |rng: &mut dyn rand::RngCore| ATTRS[rng.gen_range(0..ATTRS.len())].to_string();
    match rng.gen_range(0..if depth == 0 { 4 } else { 3 }) {
        0 => RuleKind::ExactMatch { attribute: attr(rng) },
        1 => RuleKind::Range {
            anchor_attribute: attr(rng),
            rec_attribute: attr(rng),
            direction: if rng.gen_bool(0.5) { Direction::Le } else { Direction::Ge },
        },
        2 => RuleKind::Contain {
            attribute: attr(rng),
            side: if rng.gen_bool(0.5) { Side::Anchor } else { Side::Rec },
        },
        _ => RuleKind::And {
            parts: (0..rng.gen_range(2..4)).map(|_| random_kind(rng, depth + 1)).collect(),
        },
    }
}

fn holds(kind: &RuleKind, enc: &PairEncoding) -> bool {
    let present = |c: usize| enc.mask[c];
    match kind {
        RuleKind::ExactMatch { attribute } => {
            let c = col(Provenance::SharedDiff, attribute);
            present(c) && enc.values[c] == 0.0
        }
        RuleKind::Range {
            anchor_attribute,
            rec_attribute,
            direction,
        } => {
            let a = col(Provenance::Anchor, anchor_attribute);
            let b = col(Provenance::Rec, rec_attribute);
            present(a)
                && present(b)
                && match direction {
                    Direction::Le => enc.values[a] <= enc.values[b],
                    Direction::Ge => enc.values[a] >= enc.values[b],
                }
        }
        RuleKind::Contain { attribute, side } => present(col(
            match side {
                Side::Anchor => Provenance::Anchor,
                Side::Rec => Provenance::Rec,
            },
            attribute,
        )),
        RuleKind::And { parts } => parts.iter().all(|p| holds(p, enc)),
        RuleKind::Prompt(_) => false,
    }
}

fn product(id: &str, rng: &mut impl Rng) -> Product {
    let words = ["lamp", "alpha", "steel", "warm", "alpha", "glass"];
    let description = if rng.gen_bool(0.1) {
        String::new()
    } else {
        (0..rng.gen_range(1..8))
            .map(|_| words[rng.gen_range(0..words.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    Product {
        id: id.into(),
        category: "c".into(),
        name: "Fixture".into(),
        attributes: BTreeMap::new(),
        description,
    }
}

pub fn score_pair_oracle(seed: u64) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = random_layout();
    let lm = CountingLm::new(&mut rng);
    let builder = PromptBuilder::default();
    for case in 0..INSTANCES {
        let n_rules = rng.gen_range(0..6);
        let rules: Vec<AcceptedRule> = (0..n_rules)
            .map(|i| {
                let kind = if rng.gen_bool(0.3) {
                    let token = TOKENS[rng.gen_range(0..TOKENS.len())];
                    RuleKind::Prompt(PromptRule {
                        attribute: ATTRS[rng.gen_range(0..ATTRS.len())].into(),
                        relation: token.into(),
                        probability: 0.8,
                        polarity: Polarity::Compatible,
                        filled_text: String::new(),
                        statement: String::new(),
                        embedding: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        source_pair: PairKey::new("x", "y"),
                    })
                } else {
                    random_kind(&mut rng, 0)
                };
                AcceptedRule {
                    id: RuleId(format!("r{i}")),
                    kind,
                    mu: if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..0.5) },
                    iteration: 1,
                }
            })
            .collect();
        let dim = layout.len();
        let enc = PairEncoding {
            values: (0..dim).map(|_| rng.gen_range(0..3) as f64).collect(),
            mask: (0..dim).map(|_| rng.gen_bool(0.7)).collect(),
        };
        let enc = PairEncoding {
            values: enc.values.iter().zip(&enc.mask).map(|(v, m)| if *m { *v } else { 0.0 }).collect(),
            mask: enc.mask,
        };
        let anchor = product("a", &mut rng);
        let rec = product("b", &mut rng);

        let mut expected_total = 0.0;
        for r in &rules {
            expected_total += match &r.kind {
                RuleKind::Prompt(p) => {
                    if anchor.description.is_empty() || rec.description.is_empty() {
                        0.0
                    } else {
                        let token = TOKENS[(alpha_count(&anchor.description) + alpha_count(&rec.description)) % 3];
                        r.mu * oracle_cosine(&lm.table[token], &p.embedding)
                    }
                }
                kind => {
                    if holds(kind, &enc) {
                        r.mu
                    } else {
                        0.0
                    }
                }
            };
        }
        let mass: f64 = rules.iter().map(|r| r.mu).sum();
        let expected_norm = if mass > 0.0 { expected_total / mass } else { 0.0 };

        let mut matcher = Matcher::new(&layout, &lm, &builder);
        let got = matcher
            .score_pair(&rules, &PairKey::new("a", "b"), &anchor, &rec, &enc)
            .map_err(|e| e.to_string())?;
        if (got.total - expected_total).abs() > 1e-12 || (got.normalized - expected_norm).abs() > 1e-12 {
            return Err(format!(
                "case {case}: score {} / {} vs {expected_total} / {expected_norm}",
                got.total, got.normalized
            ));
        }
        if !(0.0..=1.0 + 1e-12).contains(&got.normalized) {
            return Err(format!("case {case}: normalized score {} outside [0, 1]", got.normalized));
        }
    }
    Ok(format!("{INSTANCES} instances"))
}

// ------------------------------------------------------- permutation importance

pub fn permutation_oracle(seed: u64) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut never_split = 0;
    let cases = 30;
    for case in 0..cases {
        let n = rng.gen_range(40..150);
        let d = rng.gen_range(4..12);
        let subset: Vec<(PairEncoding, Label)> = (0..n)
            .map(|_| {
                let values: Vec<f64> = (0..d).map(|_| rng.gen_range(0..4) as f64).collect();
                let mask: Vec<bool> = (0..d).map(|_| rng.gen_bool(0.8)).collect();
                let y = if values[0] + values[1 % d] > 3.0 || rng.gen_bool(0.1) {
                    Label::Positive
                } else {
                    Label::Negative
                };
                let values = values.iter().zip(&mask).map(|(v, m)| if *m { *v } else { 0.0 }).collect();
                (PairEncoding { values, mask }, y)
            })
            .collect();
        let tree = fit_tree(&subset, rng.gen_range(3..6), rng.gen()).map_err(|e| e.to_string())?;
        let plan_seed: u64 = rng.gen();
        let repeats = rng.gen_range(1..6);
        let stored = PermutationPlan::new(n, d, repeats, plan_seed);
        let got = permutation_importance(&tree, &subset, &stored).map_err(|e| e.to_string())?;

        // the stored plan is what the seed regenerates, and it survives a round trip
        let text = serde_json::to_string(&stored).unwrap();
        let plan: PermutationPlan = serde_json::from_str(&text).unwrap();
        if plan != PermutationPlan::new(n, d, repeats, plan_seed) {
            return Err(format!("case {case}: plan does not regenerate from its seed"));
        }

        let accuracy = |rows: &[(PairEncoding, Label)]| {
            rows.iter().filter(|(e, y)| tree.predict(e) == *y).count() as f64 / n as f64
        };
        let base = accuracy(&subset);
        let splits = tree.split_features();
        for f in 0..d {
            let mut drop = 0.0;
            for perm in &plan.perms[f] {
                let mut shuffled = subset.clone();
                for row in 0..n {
                    shuffled[row].0.values[f] = subset[perm[row]].0.values[f];
                    shuffled[row].0.mask[f] = subset[perm[row]].0.mask[f];
                }
                drop += base - accuracy(&shuffled);
            }
            let expected = drop / repeats as f64;
            if (got[f].mu - expected).abs() > 1e-12 {
                return Err(format!("case {case}: feature {f} mu {} vs {expected}", got[f].mu));
            }
            if !splits.contains(&f) {
                never_split += 1;
                if got[f].mu != 0.0 {
                    return Err(format!("case {case}: never-split feature {f} has mu {}", got[f].mu));
                }
            }
        }
    }
    if never_split == 0 {
        return Err("no never-split feature was exercised".into());
    }
    Ok(format!("{cases} trees, {never_split} never-split features at mu = 0"))
}

// ---------------------------------------------------------------- gradients

pub fn gradient_check(seed: u64) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for net in 0..20 {
        let mut sizes = vec![rng.gen_range(2..10)];
        for _ in 0..rng.gen_range(1..3) {
            sizes.push(rng.gen_range(2..17));
        }
        sizes.push(2);
        let model = MlpModel::new(&sizes, &mut rng);
        let xs: Vec<Vec<f64>> = (0..rng.gen_range(1..8))
            .map(|_| (0..sizes[0]).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let ys: Vec<Label> = xs.iter().map(|_| label(&mut rng)).collect();
        let batch: Vec<(&[f64], Label)> = xs.iter().map(|x| x.as_slice()).zip(ys.iter().copied()).collect();
        let (_, analytic) = model.loss_and_gradient(&batch);
        let params = model.params();
        let mut probe = model.clone();
        let mut numeric = vec![0.0; params.len()];
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] = params[i] + h;
            probe.set_params(&p);
            let up = probe.loss_and_gradient(&batch).0;
            p[i] = params[i] - h;
            probe.set_params(&p);
            let down = probe.loss_and_gradient(&batch).0;
            numeric[i] = (up - down) / (2.0 * h);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
        let rel = if norm == 0.0 { 0.0 } else { diff / norm };
        worst = worst.max(rel);
        if rel >= 1e-4 {
            return Err(format!("network {net} {sizes:?}: relative error {rel:e}"));
        }
    }
    Ok(format!("20 networks, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- boosting sanity

/// Two well-separated blobs. The first weak learner is a deliberately
/// misplaced stump so the weights move at least once; the rest are MLPs
/// retrained with fresh seeds.
pub fn boosting_sanity(seed: u64) -> std::result::Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<(Vec<f64>, Label)> = (0..400)
        .map(|i| {
            let y = if i % 2 == 0 { Label::Positive } else { Label::Negative };
            let c = if y == Label::Positive { 2.0 } else { -2.0 };
            (vec![c + rng.gen_range(-1.0..1.0), c + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], y)
        })
        .collect();
    let labels: Vec<Label> = data.iter().map(|(_, y)| *y).collect();
    let mut state = BoostState::new(data.len()).map_err(|e| e.to_string())?;
    let mut errors = Vec::new();
    for t in 0..6u64 {
        let preds: Vec<Label> = if t == 0 {
            let stump = Stump {
                feature: 0,
                threshold: 1.5,
                flip: false,
            };
            data.iter().map(|(x, _)| stump.classify(x)).collect()
        } else {
            let cfg = TrainConfig {
                learning_rate: 1e-2,
                epochs: 30,
                hidden: vec![8],
                seed: seed ^ t,
                ..TrainConfig::default()
            };
            let model = train_weak_model(&data, &[], &cfg).map_err(|e| e.to_string())?.model;
            data.iter().map(|(x, _)| model.classify(x)).collect()
        };
        let rec = state.step(&preds, &labels).map_err(|e| e.to_string())?;
        if !(rec.err < 0.5 && rec.alpha > 0.0) {
            return Err(format!("iteration {}: err {} alpha {}", rec.iteration, rec.err, rec.alpha));
        }
        if rec.weight_sum_after < rec.weight_sum_before {
            return Err(format!("iteration {}: weight sum decreased", rec.iteration));
        }
        if (rec.weight_sum_after == rec.weight_sum_before) != (rec.misclassified == 0) {
            return Err(format!(
                "iteration {}: sum {} -> {} with {} errors",
                rec.iteration, rec.weight_sum_before, rec.weight_sum_after, rec.misclassified
            ));
        }
        errors.push(rec.misclassified);
    }
    Ok(format!("errors per iteration {errors:?}"))
}

pub fn run_oracles() -> Vec<Check> {
    let s30 = Duration::from_secs(30);
    vec![
        timed("equation oracle: weighted_error", s30, || weighted_error_oracle(1)),
        timed("equation oracle: model_coefficient", s30, || model_coefficient_oracle(2)),
        timed("equation oracle: update_weights", s30, || update_weights_oracle(3)),
        timed("equation oracle: select_large_error", s30, || select_large_error_oracle(4)),
        timed("equation oracle: score_pair", s30, || score_pair_oracle(5)),
        timed("equation oracle: ensemble_predict", s30, || ensemble_oracle(6)),
        timed("permutation-importance oracle", s30, || permutation_oracle(7)),
        timed("gradient check", Duration::from_secs(60), || gradient_check(8)),
        timed("boosting sanity", Duration::from_secs(60), || boosting_sanity(9)),
    ]
}

pub fn timed_check(name: &str, budget: Duration, f: impl FnOnce() -> std::result::Result<String, String>) -> Check {
    timed(name, budget, f)
}

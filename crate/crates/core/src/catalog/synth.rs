//! Synthetic planted-rule benchmark: two catalogs whose true compatibility is
//! the conjunction of a set of planted rules, and a co-purchase log whose
//! high-count records are noisy evidence of that compatibility.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttributeKind, AttributeValue, Catalog, CoPurchaseRecord, PairKey, Product};
use crate::error::{Error, Result};
use crate::rules::{Direction, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthSide {
    Anchor,
    Rec,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ValueSpec {
    /// Levels drawn with the given weights (uniform when `weights` is empty).
    Categorical {
        levels: Vec<String>,
        #[serde(default)]
        weights: Vec<f64>,
    },
    /// A numeric value drawn uniformly from a fixed list.
    Choice { values: Vec<f64> },
    /// A numeric value drawn uniformly from `[min, max]`, rounded to one decimal.
    Uniform { min: f64, max: f64 },
}

impl ValueSpec {
    fn kind(&self) -> AttributeKind {
        match self {
            ValueSpec::Categorical { .. } => AttributeKind::Categorical,
            _ => AttributeKind::Numerical,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> AttributeValue {
        match self {
            ValueSpec::Categorical { levels, weights } => {
                let i = if weights.len() == levels.len() {
                    let total: f64 = weights.iter().sum();
                    let mut u = rng.gen::<f64>() * total;
                    let mut pick = levels.len() - 1;
                    for (i, w) in weights.iter().enumerate() {
                        if u < *w {
                            pick = i;
                            break;
                        }
                        u -= w;
                    }
                    pick
                } else {
                    rng.gen_range(0..levels.len())
                };
                AttributeValue::Categorical(levels[i].clone())
            }
            ValueSpec::Choice { values } => {
                AttributeValue::Numerical(values[rng.gen_range(0..values.len())])
            }
            ValueSpec::Uniform { min, max } => {
                let x = min + rng.gen::<f64>() * (max - min);
                AttributeValue::Numerical((x * 10.0).round() / 10.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthAttribute {
    pub name: String,
    pub side: SynthSide,
    pub values: ValueSpec,
    /// Fraction of products whose attribute cell is left unfilled.
    #[serde(default)]
    pub missing_rate: f64,
    /// Whether descriptions state the (latent) value as `Name: value.`.
    #[serde(default)]
    pub in_description: bool,
}

/// A ground-truth rule. Exact-match and range rules are evaluated on the latent
/// (never masked) attribute values; contain rules on the observed cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PlantedRule {
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
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub anchor_category: String,
    pub rec_category: String,
    /// Product names used as n_a / n_b in prompts.
    pub anchor_name: String,
    pub rec_name: String,
    pub n_anchor_products: usize,
    pub n_rec_products: usize,
    pub attributes: Vec<SynthAttribute>,
    pub planted_rules: Vec<PlantedRule>,
    /// Size of the curated weak dataset under `neg_ratio = 1`: half of it is
    /// emitted as high-count co-purchase records.
    pub pair_count: usize,
    /// Share of high-count records that violate the planted rules.
    pub noise: f64,
    /// Threshold separating high-count from low-count records.
    pub min_count: u32,
    /// Low-count records (count below `min_count`) added as distractors.
    pub low_count_records: usize,
    /// Share of low-count records that are truly compatible.
    pub low_count_compatible_share: f64,
    /// Geometric continuation probability of the count above `min_count` for
    /// compatible pairs; heavier tail means higher counts.
    pub compatible_count_tail: f64,
    /// Same for incompatible (noise) pairs.
    pub noise_count_tail: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::planted_benchmark(7)
    }
}

impl SynthConfig {
    /// The lighting benchmark: 12 attributes (brand, dimmable and finish are
    /// 60% missing), 5 planted rules, 5,000 curated pairs, 20% co-purchase
    /// noise.
    pub fn planted_benchmark(seed: u64) -> Self {
        let cat = |levels: &[&str]| ValueSpec::Categorical {
            levels: levels.iter().map(|s| s.to_string()).collect(),
            weights: Vec::new(),
        };
        let attr = |name: &str, side, values, missing_rate, in_description| SynthAttribute {
            name: name.into(),
            side,
            values,
            missing_rate,
            in_description,
        };
        use SynthSide::*;
        let attributes = vec![
            attr(
                "base_type",
                Shared,
                ValueSpec::Categorical {
                    levels: vec!["e26".into(), "e12".into(), "gu10".into()],
                    weights: vec![0.5, 0.3, 0.2],
                },
                0.05,
                false,
            ),
            attr("voltage", Shared, ValueSpec::Choice { values: vec![120.0, 230.0] }, 0.1, false),
            attr("brand", Shared, cat(&["lumina", "brightco", "voltra"]), 0.6, true),
            attr("dimmable", Shared, cat(&["yes", "no"]), 0.6, true),
            attr(
                "max_wattage",
                Anchor,
                ValueSpec::Choice {
                    values: vec![40.0, 60.0, 75.0, 100.0, 150.0],
                },
                0.05,
                false,
            ),
            attr("finish", Anchor, cat(&["brass", "nickel", "bronze", "chrome", "matte"]), 0.6, true),
            attr("height", Anchor, ValueSpec::Uniform { min: 10.0, max: 60.0 }, 0.1, false),
            attr("material", Anchor, cat(&["glass", "metal", "fabric", "wood"]), 0.1, false),
            attr(
                "wattage",
                Rec,
                ValueSpec::Choice {
                    values: vec![9.0, 15.0, 25.0, 40.0, 60.0, 75.0, 100.0],
                },
                0.05,
                false,
            ),
            attr("color_temp", Rec, cat(&["warm", "neutral", "daylight"]), 0.1, false),
            attr("lumens", Rec, ValueSpec::Uniform { min: 200.0, max: 1600.0 }, 0.1, false),
            attr("certification", Rec, cat(&["ul", "etl"]), 0.25, false),
        ];
        let planted_rules = vec![
            PlantedRule::ExactMatch {
                attribute: "base_type".into(),
            },
            PlantedRule::Range {
                anchor_attribute: "max_wattage".into(),
                rec_attribute: "wattage".into(),
                direction: Direction::Ge,
            },
            PlantedRule::Contain {
                attribute: "certification".into(),
                side: Side::Rec,
            },
            PlantedRule::ExactMatch {
                attribute: "brand".into(),
            },
            PlantedRule::ExactMatch {
                attribute: "dimmable".into(),
            },
        ];
        SynthConfig {
            seed,
            anchor_category: "lighting_fixture".into(),
            rec_category: "light_bulb".into(),
            anchor_name: "Light fixture".into(),
            rec_name: "Light bulb".into(),
            n_anchor_products: 400,
            n_rec_products: 400,
            attributes,
            planted_rules,
            pair_count: 5000,
            noise: 0.2,
            min_count: 3,
            low_count_records: 2500,
            low_count_compatible_share: 0.5,
            compatible_count_tail: 0.85,
            noise_count_tail: 0.5,
        }
    }

    pub fn attribute(&self, name: &str) -> Option<&SynthAttribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_anchor_products == 0 || self.n_rec_products == 0 {
            return bad("catalog sizes must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad(format!("noise must be in [0, 1], got {}", self.noise));
        }
        if self.min_count < 1 {
            return bad("min_count must be at least 1".into());
        }
        let mut names = HashSet::new();
        for a in &self.attributes {
            if !names.insert(&a.name) {
                return bad(format!("attribute {:?} declared twice", a.name));
            }
            if !(0.0..=1.0).contains(&a.missing_rate) {
                return bad(format!("attribute {:?} has missing_rate outside [0, 1]", a.name));
            }
            let empty = match &a.values {
                ValueSpec::Categorical { levels, .. } => levels.is_empty(),
                ValueSpec::Choice { values } => values.is_empty(),
                ValueSpec::Uniform { min, max } => !(min <= max),
            };
            if empty {
                return bad(format!("attribute {:?} has an empty value domain", a.name));
            }
        }
        let on_side = |name: &str, side: Side| {
            self.attribute(name).is_some_and(|a| {
                a.side == SynthSide::Shared
                    || matches!((a.side, side), (SynthSide::Anchor, Side::Anchor) | (SynthSide::Rec, Side::Rec))
            })
        };
        for rule in &self.planted_rules {
            match rule {
                PlantedRule::ExactMatch { attribute } => match self.attribute(attribute) {
                    Some(a) if a.side == SynthSide::Shared => {}
                    Some(_) => return bad(format!("exact-match rule on {attribute:?} needs a shared attribute")),
                    None => return bad(format!("planted rule references unknown attribute {attribute:?}")),
                },
                PlantedRule::Range {
                    anchor_attribute,
                    rec_attribute,
                    ..
                } => {
                    for (name, side) in [(anchor_attribute, Side::Anchor), (rec_attribute, Side::Rec)] {
                        match self.attribute(name) {
                            None => return bad(format!("planted rule references unknown attribute {name:?}")),
                            Some(a) if a.values.kind() != AttributeKind::Numerical => {
                                return bad(format!("range rule on non-numerical attribute {name:?}"))
                            }
                            Some(_) if !on_side(name, side) => {
                                return bad(format!("attribute {name:?} does not exist on the {side:?} side"))
                            }
                            Some(_) => {}
                        }
                    }
                }
                PlantedRule::Contain { attribute, side } => {
                    if self.attribute(attribute).is_none() {
                        return bad(format!("planted rule references unknown attribute {attribute:?}"));
                    }
                    if !on_side(attribute, *side) {
                        return bad(format!("attribute {attribute:?} does not exist on the {side:?} side"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub anchors: Catalog,
    pub recs: Catalog,
    pub copurchase: Vec<CoPurchaseRecord>,
    pub truth_rules: Vec<PlantedRule>,
    /// Full attribute values before masking, keyed by product id.
    pub latent: BTreeMap<String, BTreeMap<String, AttributeValue>>,
}

impl SynthOutput {
    /// Ground-truth compatibility of a pair: the conjunction of all planted
    /// rules.
    pub fn is_compatible(&self, key: &PairKey) -> bool {
        match (self.anchors.get(&key.anchor), self.recs.get(&key.rec)) {
            (Some(a), Some(b)) => satisfies_all(&self.truth_rules, a, b, &self.latent),
            _ => false,
        }
    }

    /// How many planted rules a pair violates.
    pub fn violations(&self, key: &PairKey) -> usize {
        match (self.anchors.get(&key.anchor), self.recs.get(&key.rec)) {
            (Some(a), Some(b)) => self
                .truth_rules
                .iter()
                .filter(|r| !planted_rule_holds(r, a, b, &self.latent))
                .count(),
            _ => self.truth_rules.len(),
        }
    }
}

/// Evaluates one planted rule on a pair.
pub fn planted_rule_holds(
    rule: &PlantedRule,
    anchor: &Product,
    rec: &Product,
    latent: &BTreeMap<String, BTreeMap<String, AttributeValue>>,
) -> bool {
    let latent_of = |p: &Product, name: &str| -> AttributeValue {
        latent
            .get(&p.id)
            .and_then(|m| m.get(name))
            .cloned()
            .unwrap_or_else(|| p.attribute(name).clone())
    };
    match rule {
        PlantedRule::ExactMatch { attribute } => {
            let (a, b) = (latent_of(anchor, attribute), latent_of(rec, attribute));
            !a.is_missing() && a == b
        }
        PlantedRule::Range {
            anchor_attribute,
            rec_attribute,
            direction,
        } => match (
            latent_of(anchor, anchor_attribute).as_f64(),
            latent_of(rec, rec_attribute).as_f64(),
        ) {
            (Some(a), Some(b)) => direction.holds(a, b),
            _ => false,
        },
        PlantedRule::Contain { attribute, side } => {
            let p = match side {
                Side::Anchor => anchor,
                Side::Rec => rec,
            };
            !p.attribute(attribute).is_missing()
        }
    }
}

fn satisfies_all(
    rules: &[PlantedRule],
    anchor: &Product,
    rec: &Product,
    latent: &BTreeMap<String, BTreeMap<String, AttributeValue>>,
) -> bool {
    rules.iter().all(|r| planted_rule_holds(r, anchor, rec, latent))
}

pub fn synth_generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut latent = BTreeMap::new();

    let mut make_catalog = |side: Side, n: usize, rng: &mut ChaCha8Rng| -> Result<Catalog> {
        let (prefix, category, name) = match side {
            Side::Anchor => ("A", &config.anchor_category, &config.anchor_name),
            Side::Rec => ("B", &config.rec_category, &config.rec_name),
        };
        let attrs: Vec<&SynthAttribute> = config
            .attributes
            .iter()
            .filter(|a| {
                a.side == SynthSide::Shared
                    || matches!((a.side, side), (SynthSide::Anchor, Side::Anchor) | (SynthSide::Rec, Side::Rec))
            })
            .collect();
        let fulls: Vec<BTreeMap<String, AttributeValue>> = (0..n)
            .map(|_| attrs.iter().map(|a| (a.name.clone(), a.values.draw(rng))).collect())
            .collect();
        // exactly round(rate * n) cells of each attribute are masked
        let mut masked: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
        for a in &attrs {
            let k = (a.missing_rate * n as f64).round() as usize;
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(rng);
            let mut m = vec![false; n];
            for &r in &rows[..k.min(n)] {
                m[r] = true;
            }
            masked.insert(&a.name, m);
        }
        let mut products = Vec::with_capacity(n);
        for (i, full) in fulls.into_iter().enumerate() {
            let id = format!("{prefix}{i:05}");
            let observed = full
                .iter()
                .map(|(name, v)| {
                    let shown = if masked[name.as_str()][i] {
                        AttributeValue::Missing
                    } else {
                        v.clone()
                    };
                    (name.clone(), shown)
                })
                .collect();
            let description = describe(name, &attrs, &full, rng);
            latent.insert(id.clone(), full);
            products.push(Product {
                id,
                category: category.clone(),
                name: name.clone(),
                attributes: observed,
                description,
            });
        }
        Catalog::new(products)
    };
    let anchors = make_catalog(Side::Anchor, config.n_anchor_products, &mut rng)?;
    let recs = make_catalog(Side::Rec, config.n_rec_products, &mut rng)?;

    let mut compatible = Vec::new();
    let mut incompatible = Vec::new();
    for a in &anchors.products {
        for b in &recs.products {
            let key = PairKey::new(&a.id, &b.id);
            if satisfies_all(&config.planted_rules, a, b, &latent) {
                compatible.push(key);
            } else {
                incompatible.push(key);
            }
        }
    }
    compatible.shuffle(&mut rng);
    incompatible.shuffle(&mut rng);
    let mut compatible = compatible.into_iter();
    let mut incompatible = incompatible.into_iter();

    let mut copurchase = Vec::new();
    let high = config.pair_count / 2;
    let exhausted = |what: &str| {
        Error::Config(format!(
            "not enough {what} pairs for the requested co-purchase log; enlarge the catalogs"
        ))
    };
    for _ in 0..high {
        let noisy = rng.gen::<f64>() < config.noise;
        let (key, tail) = if noisy {
            (incompatible.next().ok_or_else(|| exhausted("incompatible"))?, config.noise_count_tail)
        } else {
            (compatible.next().ok_or_else(|| exhausted("compatible"))?, config.compatible_count_tail)
        };
        let mut count = config.min_count;
        while count < config.min_count + 60 && rng.gen::<f64>() < tail {
            count += 1;
        }
        copurchase.push(CoPurchaseRecord {
            anchor_id: key.anchor,
            rec_id: key.rec,
            count,
        });
    }
    if config.min_count > 1 {
        for _ in 0..config.low_count_records {
            let key = if rng.gen::<f64>() < config.low_count_compatible_share {
                compatible.next().ok_or_else(|| exhausted("compatible"))?
            } else {
                incompatible.next().ok_or_else(|| exhausted("incompatible"))?
            };
            copurchase.push(CoPurchaseRecord {
                anchor_id: key.anchor,
                rec_id: key.rec,
                count: rng.gen_range(1..config.min_count),
            });
        }
    }

    Ok(SynthOutput {
        anchors,
        recs,
        copurchase,
        truth_rules: config.planted_rules.clone(),
        latent,
    })
}

const FILLERS: &[&str] = &[
    "Built for everyday use in homes and offices.",
    "Backed by a limited warranty.",
    "Easy to install with standard tools.",
    "Designed for long service life.",
    "Ships in recyclable packaging.",
    "Rated for indoor use.",
];

fn describe(
    name: &str,
    attrs: &[&SynthAttribute],
    full: &BTreeMap<String, AttributeValue>,
    rng: &mut ChaCha8Rng,
) -> String {
    let mut sentences = vec![format!("A quality {} for modern spaces.", name.to_lowercase())];
    for a in attrs.iter().filter(|a| a.in_description) {
        let title = a.name.replace('_', " ");
        let mut chars = title.chars();
        let title: String = match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect(),
            None => continue,
        };
        sentences.push(format!("{title}: {}.", full[&a.name]));
    }
    sentences.push(FILLERS[rng.gen_range(0..FILLERS.len())].to_string());
    sentences.join(" ")
}

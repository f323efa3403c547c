//! Product catalogs, co-purchase logs and weak dataset curation.

mod curate;
mod synth;

pub use curate::{
    build_weak_dataset, sample_unlabeled, split_dataset, CurationConfig, SplitConfig,
};
pub use synth::{
    synth_generate, PlantedRule, SynthAttribute, SynthConfig, SynthOutput, SynthSide, ValueSpec,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Categorical,
    Numerical,
}

/// A single attribute cell. `Missing` is the placeholder for an unfilled
/// attribute; it serializes as JSON `null` and is a distinct variant, so it
/// can never be confused with a categorical string.
#[derive(Debug, Clone, PartialEq)]
pub enum AttributeValue {
    Categorical(String),
    Numerical(f64),
    Missing,
}

impl AttributeValue {
    pub fn kind(&self) -> Option<AttributeKind> {
        match self {
            AttributeValue::Categorical(_) => Some(AttributeKind::Categorical),
            AttributeValue::Numerical(_) => Some(AttributeKind::Numerical),
            AttributeValue::Missing => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, AttributeValue::Missing)
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttributeValue::Categorical(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttributeValue::Numerical(x) => Some(*x),
            _ => None,
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeValue::Categorical(s) => f.write_str(s),
            AttributeValue::Numerical(x) => write!(f, "{x}"),
            AttributeValue::Missing => f.write_str("null"),
        }
    }
}

impl Serialize for AttributeValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AttributeValue::Categorical(s) => serializer.serialize_str(s),
            AttributeValue::Numerical(x) => serializer.serialize_f64(*x),
            AttributeValue::Missing => serializer.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for AttributeValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ValueVisitor;

        impl<'de> Visitor<'de> for ValueVisitor {
            type Value = AttributeValue;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a string, a finite number or null")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                Ok(AttributeValue::Categorical(v.to_owned()))
            }

            fn visit_string<E: de::Error>(self, v: String) -> std::result::Result<Self::Value, E> {
                Ok(AttributeValue::Categorical(v))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Self::Value, E> {
                if v.is_finite() {
                    Ok(AttributeValue::Numerical(v))
                } else {
                    Err(E::custom("numerical attribute values must be finite"))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                Ok(AttributeValue::Numerical(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                Ok(AttributeValue::Numerical(v as f64))
            }

            fn visit_none<E: de::Error>(self) -> std::result::Result<Self::Value, E> {
                Ok(AttributeValue::Missing)
            }

            fn visit_unit<E: de::Error>(self) -> std::result::Result<Self::Value, E> {
                Ok(AttributeValue::Missing)
            }
        }

        deserializer.deserialize_any(ValueVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub category: String,
    pub name: String,
    pub attributes: BTreeMap<String, AttributeValue>,
    pub description: String,
}

impl Product {
    pub fn attribute(&self, name: &str) -> &AttributeValue {
        const MISSING: AttributeValue = AttributeValue::Missing;
        self.attributes.get(name).unwrap_or(&MISSING)
    }
}

/// Column layout and missing-rates of one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub category: String,
    pub columns: Vec<(String, AttributeKind)>,
    pub sparsity: BTreeMap<String, f64>,
}

impl AttributeSchema {
    /// Infers the schema from the products of a catalog. Columns come out in
    /// name order, which keeps the featurization layout stable.
    pub fn infer(category: &str, products: &[Product]) -> Result<Self> {
        let mut kinds: BTreeMap<String, Option<AttributeKind>> = BTreeMap::new();
        for p in products {
            for (name, value) in &p.attributes {
                let slot = kinds.entry(name.clone()).or_insert(None);
                if let Some(kind) = value.kind() {
                    match slot {
                        None => *slot = Some(kind),
                        Some(k) if *k != kind => {
                            return Err(Error::Ingestion(format!(
                                "attribute {name:?} of category {category:?} mixes categorical and numerical values"
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        let n = products.len().max(1) as f64;
        let mut columns = Vec::with_capacity(kinds.len());
        let mut sparsity = BTreeMap::new();
        for (name, kind) in kinds {
            // an attribute that is never filled carries no type information;
            // treat it as categorical so it still occupies a column
            columns.push((name.clone(), kind.unwrap_or(AttributeKind::Categorical)));
            let missing = products
                .iter()
                .filter(|p| p.attribute(&name).is_missing())
                .count();
            sparsity.insert(name, missing as f64 / n);
        }
        Ok(AttributeSchema {
            category: category.to_owned(),
            columns,
            sparsity,
        })
    }

    pub fn kind_of(&self, name: &str) -> Option<AttributeKind> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, k)| *k)
    }

    pub fn sparsity_of(&self, name: &str) -> f64 {
        self.sparsity.get(name).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub category: String,
    pub products: Vec<Product>,
    pub schema: AttributeSchema,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(products: Vec<Product>) -> Result<Self> {
        let category = match products.first() {
            Some(p) => p.category.clone(),
            None => return Err(Error::Ingestion("catalog is empty".into())),
        };
        let mut index = HashMap::with_capacity(products.len());
        for (i, p) in products.iter().enumerate() {
            if p.category != category {
                return Err(Error::Ingestion(format!(
                    "product {:?} has category {:?}, catalog is {:?}",
                    p.id, p.category, category
                )));
            }
            if index.insert(p.id.clone(), i).is_some() {
                return Err(Error::Ingestion(format!("duplicate product id {:?}", p.id)));
            }
        }
        let schema = AttributeSchema::infer(&category, &products)?;
        Ok(Catalog {
            category,
            products,
            schema,
            index,
        })
    }

    pub fn get(&self, id: &str) -> Option<&Product> {
        self.index.get(id).map(|&i| &self.products[i])
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
        let mut products = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::file(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let product: Product = serde_json::from_str(&line).map_err(|e| {
                Error::Ingestion(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            products.push(product);
        }
        Catalog::new(products)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
        let mut out = BufWriter::new(file);
        for p in &self.products {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoPurchaseRecord {
    pub anchor_id: String,
    pub rec_id: String,
    pub count: u32,
}

pub fn load_copurchase(path: impl AsRef<Path>) -> Result<Vec<CoPurchaseRecord>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["anchor_id", "rec_id", "count"] {
        return Err(Error::Ingestion(format!(
            "{}: expected header anchor_id,rec_id,count",
            path.display()
        )));
    }
    let mut records = Vec::new();
    for row in reader.deserialize() {
        records.push(row?);
    }
    validate_copurchase(&records)?;
    Ok(records)
}

pub fn write_copurchase(path: impl AsRef<Path>, records: &[CoPurchaseRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn validate_copurchase(records: &[CoPurchaseRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if r.count < 1 {
            return Err(Error::Ingestion(format!(
                "co-purchase ({}, {}) has count 0",
                r.anchor_id, r.rec_id
            )));
        }
        if !seen.insert((r.anchor_id.as_str(), r.rec_id.as_str())) {
            return Err(Error::Ingestion(format!(
                "duplicate co-purchase record ({}, {})",
                r.anchor_id, r.rec_id
            )));
        }
    }
    Ok(())
}

/// An (anchor, recommendation) pair of product ids. Ordering is by anchor id,
/// then recommendation id, which is the tie-break used wherever pairs are
/// sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub anchor: String,
    pub rec: String,
}

impl PairKey {
    pub fn new(anchor: impl Into<String>, rec: impl Into<String>) -> Self {
        PairKey {
            anchor: anchor.into(),
            rec: rec.into(),
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}::{}", self.anchor, self.rec)
    }
}

/// Binary compatibility label. Class index 0 is `Positive` (+1), index 1 is
/// `Negative` (-1), everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }

    pub fn class_index(self) -> usize {
        match self {
            Label::Positive => 0,
            Label::Negative => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Self {
        if i == 0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn from_sign(s: f64) -> Self {
        if s >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_i8(self.sign())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match i8::deserialize(deserializer)? {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(de::Error::custom(format!("label must be 1 or -1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Copurchase,
    Rule,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub pair: PairKey,
    pub label: Label,
    pub weak: bool,
    pub source: LabelSource,
    /// Co-purchase count for log-derived positives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    /// Iteration that minted a rule-sourced pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
}

impl LabeledPair {
    pub fn copurchase(pair: PairKey, label: Label, count: Option<u32>) -> Self {
        LabeledPair {
            pair,
            label,
            weak: true,
            source: LabelSource::Copurchase,
            count,
            iteration: None,
        }
    }

    pub fn minted(pair: PairKey, iteration: usize) -> Self {
        LabeledPair {
            pair,
            label: Label::Positive,
            weak: true,
            source: LabelSource::Rule,
            count: None,
            iteration: Some(iteration),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<PairKey>,
    pub validation: Vec<PairKey>,
    pub test: Vec<PairKey>,
    pub holdout_unlabeled: Vec<PairKey>,
}

impl DatasetSplit {
    /// Checks that the four partitions are pairwise disjoint.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, part) in self.partitions() {
            for key in part {
                if !seen.insert(key) {
                    return Err(Error::Split(format!(
                        "pair {key} appears more than once (last seen in {name})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn partitions(&self) -> [(&'static str, &[PairKey]); 4] {
        [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
            ("holdout_unlabeled", &self.holdout_unlabeled),
        ]
    }
}

/// Both catalogs plus the lookups the pipeline needs on every pair.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub anchors: Catalog,
    pub recs: Catalog,
}

impl Corpus {
    pub fn new(anchors: Catalog, recs: Catalog) -> Result<Self> {
        if let Some(p) = anchors.products.iter().find(|p| recs.get(&p.id).is_some()) {
            return Err(Error::Ingestion(format!(
                "product id {:?} appears in both catalogs",
                p.id
            )));
        }
        Ok(Corpus { anchors, recs })
    }

    pub fn pair(&self, key: &PairKey) -> Result<(&Product, &Product)> {
        let a = self
            .anchors
            .get(&key.anchor)
            .ok_or_else(|| Error::NotFound(format!("anchor product {:?}", key.anchor)))?;
        let b = self
            .recs
            .get(&key.rec)
            .ok_or_else(|| Error::NotFound(format!("recommendation product {:?}", key.rec)))?;
        Ok((a, b))
    }
}

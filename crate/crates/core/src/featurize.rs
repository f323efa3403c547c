//! Pairwise feature vectors: the anchor block, the recommendation block and a
//! shared-difference block over the attributes both categories carry.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::{AttributeKind, AttributeSchema, AttributeValue, Product};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Anchor,
    Rec,
    SharedDiff,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub index: usize,
    pub attribute_name: String,
    pub provenance: Provenance,
    pub kind: AttributeKind,
}

/// One encoded pair. `mask[i]` is false when column `i` is missing; such a
/// column holds the placeholder 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEncoding {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PairEncoding {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        if self.mask[i] {
            Some(self.values[i])
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindConflict {
    pub attribute: String,
    pub anchor_kind: AttributeKind,
    pub rec_kind: AttributeKind,
}

/// Names present in both schemas with the same kind, in anchor-schema order.
/// Same-name columns with different kinds are excluded and reported.
pub fn shared_attributes(
    schema_a: &AttributeSchema,
    schema_b: &AttributeSchema,
) -> (Vec<String>, Vec<KindConflict>) {
    let mut shared = Vec::new();
    let mut conflicts = Vec::new();
    for (name, kind) in &schema_a.columns {
        match schema_b.kind_of(name) {
            Some(k) if k == *kind => shared.push(name.clone()),
            Some(k) => conflicts.push(KindConflict {
                attribute: name.clone(),
                anchor_kind: *kind,
                rec_kind: k,
            }),
            None => {}
        }
    }
    (shared, conflicts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingLayout {
    pub descriptors: Vec<FeatureDescriptor>,
    #[serde(skip)]
    lookup: HashMap<(Provenance, String), usize>,
}

impl EncodingLayout {
    pub fn new(descriptors: Vec<FeatureDescriptor>) -> Self {
        let lookup = descriptors
            .iter()
            .map(|d| ((d.provenance, d.attribute_name.clone()), d.index))
            .collect();
        EncodingLayout {
            descriptors,
            lookup,
        }
    }

    fn rebuild_lookup(&mut self) {
        *self = EncodingLayout::new(std::mem::take(&mut self.descriptors));
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn column(&self, provenance: Provenance, attribute: &str) -> Option<usize> {
        self.lookup.get(&(provenance, attribute.to_owned())).copied()
    }

    pub fn descriptor(&self, index: usize) -> &FeatureDescriptor {
        &self.descriptors[index]
    }
}

/// Mean and standard deviation of a numerical column over the labeled set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub std: f64,
}

/// The fitted featurizer: column layout, frequency-rank codes for
/// categorical values and the standardization used for the MLP input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEncoder {
    pub layout: EncodingLayout,
    /// Per categorical column: value -> code. Codes start at 1 in decreasing
    /// frequency order (ties by value); unseen values get `levels + 1`.
    pub codes: BTreeMap<usize, BTreeMap<String, u32>>,
    /// Per numerical column, raw -> standardized.
    pub scales: BTreeMap<usize, ColumnScale>,
    pub kind_conflicts: Vec<KindConflict>,
}

impl PairEncoder {
    /// Fits the layout from the two schemas and the codes and scales from the
    /// labeled pairs.
    pub fn fit<'a>(
        schema_a: &AttributeSchema,
        schema_b: &AttributeSchema,
        train: impl IntoIterator<Item = (&'a Product, &'a Product)>,
    ) -> Result<Self> {
        let (shared, kind_conflicts) = shared_attributes(schema_a, schema_b);
        for c in &kind_conflicts {
            log::warn!(
                "attribute {:?} is {:?} for anchors but {:?} for recommendations; left out of the shared block",
                c.attribute,
                c.anchor_kind,
                c.rec_kind
            );
        }
        let mut descriptors = Vec::new();
        let mut push = |name: &str, provenance, kind| {
            let index = descriptors.len();
            descriptors.push(FeatureDescriptor {
                index,
                attribute_name: name.to_owned(),
                provenance,
                kind,
            });
        };
        for (name, kind) in &schema_a.columns {
            push(name, Provenance::Anchor, *kind);
        }
        for (name, kind) in &schema_b.columns {
            push(name, Provenance::Rec, *kind);
        }
        for name in &shared {
            let kind = schema_a.kind_of(name).expect("shared attribute");
            push(name, Provenance::SharedDiff, kind);
        }
        let layout = EncodingLayout::new(descriptors);

        let train: Vec<(&Product, &Product)> = train.into_iter().collect();
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut counts: BTreeMap<usize, BTreeMap<String, usize>> = BTreeMap::new();
        for d in &layout.descriptors {
            if d.kind != AttributeKind::Categorical || d.provenance == Provenance::SharedDiff {
                continue;
            }
            let slot = counts.entry(d.index).or_default();
            for (a, b) in &train {
                let p = if d.provenance == Provenance::Anchor { a } else { b };
                if let AttributeValue::Categorical(v) = p.attribute(&d.attribute_name) {
                    *slot.entry(v.clone()).or_default() += 1;
                }
            }
        }
        let codes = counts
            .into_iter()
            .map(|(col, freq)| {
                let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
                ranked.sort_by(|x, y| y.1.cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
                let table = ranked
                    .into_iter()
                    .enumerate()
                    .map(|(rank, (v, _))| (v, rank as u32 + 1))
                    .collect();
                (col, table)
            })
            .collect();

        let mut encoder = PairEncoder {
            layout,
            codes,
            scales: BTreeMap::new(),
            kind_conflicts,
        };
        let encoded: Vec<PairEncoding> = train.iter().map(|(a, b)| encoder.encode_pair(a, b)).collect();
        for d in &encoder.layout.descriptors {
            if d.kind != AttributeKind::Numerical {
                continue;
            }
            let present: Vec<f64> = encoded.iter().filter_map(|e| e.get(d.index)).collect();
            let n = present.len().max(1) as f64;
            let mean = present.iter().sum::<f64>() / n;
            let var = present.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let std = if var > 1e-24 { var.sqrt() } else { 1.0 };
            encoder.scales.insert(d.index, ColumnScale { mean, std });
        }
        Ok(encoder)
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    /// Raw encoding used for tree induction and rule readout: numerical values
    /// as-is, categorical values as frequency-rank codes, shared-diff columns
    /// as `a - b` (numerical) or the inequality indicator (categorical).
    pub fn encode_pair(&self, anchor: &Product, rec: &Product) -> PairEncoding {
        let n = self.layout.len();
        let mut values = vec![0.0; n];
        let mut mask = vec![false; n];
        for d in &self.layout.descriptors {
            let cell = match d.provenance {
                Provenance::Anchor => self.encode_cell(d, anchor.attribute(&d.attribute_name)),
                Provenance::Rec => self.encode_cell(d, rec.attribute(&d.attribute_name)),
                Provenance::SharedDiff => {
                    let a = anchor.attribute(&d.attribute_name);
                    let b = rec.attribute(&d.attribute_name);
                    match (a, b) {
                        (AttributeValue::Numerical(x), AttributeValue::Numerical(y)) => Some(x - y),
                        (AttributeValue::Categorical(x), AttributeValue::Categorical(y)) => {
                            Some(if x == y { 0.0 } else { 1.0 })
                        }
                        _ => None,
                    }
                }
            };
            if let Some(v) = cell {
                values[d.index] = v;
                mask[d.index] = true;
            }
        }
        PairEncoding { values, mask }
    }

    fn encode_cell(&self, d: &FeatureDescriptor, value: &AttributeValue) -> Option<f64> {
        match (d.kind, value) {
            (AttributeKind::Numerical, AttributeValue::Numerical(x)) => Some(*x),
            (AttributeKind::Categorical, AttributeValue::Categorical(v)) => {
                let table = self.codes.get(&d.index);
                let code = table
                    .and_then(|t| t.get(v).copied())
                    .unwrap_or_else(|| table.map_or(0, |t| t.len() as u32) + 1);
                Some(code as f64)
            }
            _ => None,
        }
    }

    /// Model input: numerical columns standardized with the labeled-set
    /// statistics, categorical codes unchanged, missing cells at 0.
    pub fn model_input(&self, enc: &PairEncoding) -> Vec<f64> {
        enc.values
            .iter()
            .zip(&enc.mask)
            .enumerate()
            .map(|(i, (&v, &present))| {
                if !present {
                    return 0.0;
                }
                match self.scales.get(&i) {
                    Some(s) => (v - s.mean) / s.std,
                    None => v,
                }
            })
            .collect()
    }

    /// Attribute-level sparsity for each column: the anchor or recommendation
    /// missing-rate, and the larger of the two for shared-diff columns.
    pub fn column_sparsity(&self, schema_a: &AttributeSchema, schema_b: &AttributeSchema) -> Vec<f64> {
        self.layout
            .descriptors
            .iter()
            .map(|d| match d.provenance {
                Provenance::Anchor => schema_a.sparsity_of(&d.attribute_name),
                Provenance::Rec => schema_b.sparsity_of(&d.attribute_name),
                Provenance::SharedDiff => schema_a
                    .sparsity_of(&d.attribute_name)
                    .max(schema_b.sparsity_of(&d.attribute_name)),
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut enc: PairEncoder = serde_json::from_str(s)?;
        enc.layout.rebuild_lookup();
        Ok(enc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product(id: &str, category: &str, attrs: &[(&str, AttributeValue)]) -> Product {
        Product {
            id: id.into(),
            category: category.into(),
            name: category.into(),
            attributes: attrs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            description: String::new(),
        }
    }

    fn num(x: f64) -> AttributeValue {
        AttributeValue::Numerical(x)
    }

    fn cat(s: &str) -> AttributeValue {
        AttributeValue::Categorical(s.into())
    }

    fn schema(category: &str, cols: &[(&str, AttributeKind)]) -> AttributeSchema {
        AttributeSchema {
            category: category.into(),
            columns: cols.iter().map(|(n, k)| (n.to_string(), *k)).collect(),
            sparsity: BTreeMap::new(),
        }
    }

    use AttributeKind::{Categorical, Numerical};

    #[test]
    fn shared_is_the_name_intersection() {
        let a = schema("a", &[("brand", Categorical), ("wattage", Numerical)]);
        let b = schema("b", &[("brand", Categorical), ("voltage", Numerical)]);
        assert_eq!(shared_attributes(&a, &b), (vec!["brand".to_string()], vec![]));
        let c = schema("c", &[("height", Numerical)]);
        assert_eq!(shared_attributes(&a, &c).0, Vec::<String>::new());
    }

    #[test]
    fn kind_conflicts_are_excluded_and_reported() {
        let a = schema("a", &[("color", Categorical)]);
        let b = schema("b", &[("color", Numerical)]);
        let (shared, conflicts) = shared_attributes(&a, &b);
        assert!(shared.is_empty());
        assert_eq!(conflicts.len(), 1);
        assert_eq!(conflicts[0].attribute, "color");
    }

    fn fixture() -> (PairEncoder, Product, Product) {
        let sa = schema("a", &[("brand", Categorical), ("wattage", Numerical)]);
        let sb = schema("b", &[("brand", Categorical), ("wattage", Numerical)]);
        let a = product("a1", "a", &[("brand", cat("M")), ("wattage", num(60.0))]);
        let b = product("b1", "b", &[("brand", cat("M")), ("wattage", num(40.0))]);
        let enc = PairEncoder::fit(&sa, &sb, [(&a, &b)]).unwrap();
        (enc, a, b)
    }

    #[test]
    fn layout_is_anchor_then_rec_then_diff() {
        let (enc, _, _) = fixture();
        let prov: Vec<_> = enc.layout.descriptors.iter().map(|d| d.provenance).collect();
        assert_eq!(
            prov,
            vec![
                Provenance::Anchor,
                Provenance::Anchor,
                Provenance::Rec,
                Provenance::Rec,
                Provenance::SharedDiff,
                Provenance::SharedDiff
            ]
        );
        for (i, d) in enc.layout.descriptors.iter().enumerate() {
            assert_eq!(d.index, i);
        }
    }

    #[test]
    fn numerical_diff_is_a_subtraction() {
        let (enc, a, b) = fixture();
        let x = enc.encode_pair(&a, &b);
        let col = enc.layout.column(Provenance::SharedDiff, "wattage").unwrap();
        assert_eq!(x.values[col], 20.0);
        assert!(x.mask[col]);
    }

    #[test]
    fn equal_categorical_diff_is_zero() {
        let (enc, a, b) = fixture();
        let x = enc.encode_pair(&a, &b);
        let col = enc.layout.column(Provenance::SharedDiff, "brand").unwrap();
        assert_eq!((x.values[col], x.mask[col]), (0.0, true));
    }

    #[test]
    fn missing_side_masks_the_diff() {
        let (enc, _, b) = fixture();
        let a = product("a2", "a", &[("brand", cat("M")), ("wattage", AttributeValue::Missing)]);
        let x = enc.encode_pair(&a, &b);
        let col = enc.layout.column(Provenance::SharedDiff, "wattage").unwrap();
        assert_eq!((x.values[col], x.mask[col]), (0.0, false));
        let anchor_col = enc.layout.column(Provenance::Anchor, "wattage").unwrap();
        assert!(!x.mask[anchor_col]);
    }

    #[test]
    fn codes_rank_by_frequency() {
        let sa = schema("a", &[("brand", Categorical)]);
        let sb = schema("b", &[("x", Numerical)]);
        let b = product("b", "b", &[("x", num(1.0))]);
        let a1 = product("a1", "a", &[("brand", cat("z"))]);
        let a2 = product("a2", "a", &[("brand", cat("y"))]);
        let a3 = product("a3", "a", &[("brand", cat("z"))]);
        let enc = PairEncoder::fit(&sa, &sb, [(&a1, &b), (&a2, &b), (&a3, &b)]).unwrap();
        assert_eq!(enc.encode_pair(&a1, &b).values[0], 1.0);
        assert_eq!(enc.encode_pair(&a2, &b).values[0], 2.0);
        let unseen = product("a4", "a", &[("brand", cat("q"))]);
        assert_eq!(enc.encode_pair(&unseen, &b).values[0], 3.0);
    }

    #[test]
    fn swap_negates_numeric_diff_and_keeps_categorical() {
        // same schema on both sides, so swapping is well defined
        let s = schema("s", &[("brand", Categorical), ("wattage", Numerical)]);
        let p = product("p", "s", &[("brand", cat("M")), ("wattage", num(75.0))]);
        let q = product("q", "s", &[("brand", cat("N")), ("wattage", num(15.0))]);
        let enc = PairEncoder::fit(&s, &s, [(&p, &q), (&q, &p)]).unwrap();
        let pq = enc.encode_pair(&p, &q);
        let qp = enc.encode_pair(&q, &p);
        assert_eq!(pq.values[..2], qp.values[2..4]);
        assert_eq!(pq.values[2..4], qp.values[..2]);
        assert_eq!(pq.values[4], qp.values[4]);
        assert_eq!(pq.values[5], -qp.values[5]);
    }

    #[test]
    fn model_input_standardizes_numerical_columns() {
        let s = schema("s", &[("wattage", Numerical)]);
        let ps: Vec<Product> = [10.0, 20.0, 30.0]
            .iter()
            .enumerate()
            .map(|(i, w)| product(&format!("p{i}"), "s", &[("wattage", num(*w))]))
            .collect();
        let pairs: Vec<_> = ps.iter().map(|p| (p, p)).collect();
        let enc = PairEncoder::fit(&s, &s, pairs).unwrap();
        let z = enc.model_input(&enc.encode_pair(&ps[2], &ps[2]));
        assert!((z[0] - 1.224744871391589).abs() < 1e-12);
        // constant diff column keeps std 1
        assert_eq!(z[2], 0.0);
    }

    #[test]
    fn json_roundtrip_restores_lookup() {
        let (enc, a, b) = fixture();
        let back = PairEncoder::from_json(&enc.to_json().unwrap()).unwrap();
        assert_eq!(back.layout.column(Provenance::Rec, "brand"), Some(2));
        assert_eq!(back.encode_pair(&a, &b), enc.encode_pair(&a, &b));
    }
}

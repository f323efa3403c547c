use std::collections::HashSet;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Catalog, CoPurchaseRecord, DatasetSplit, Label, LabeledPair, PairKey};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationConfig {
    /// Minimum co-purchase count for a weak positive.
    pub min_count: u32,
    /// Negatives per positive.
    pub neg_ratio: f64,
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            min_count: 3,
            neg_ratio: 1.0,
            seed: 0,
        }
    }
}

/// Curates the weakly labeled dataset: co-purchase pairs with count at least
/// `min_count` become positives, and `round(neg_ratio * |positives|)`
/// anchor x recommendation pairs absent from the whole co-purchase log are
/// sampled uniformly as negatives.
pub fn build_weak_dataset(
    anchors: &Catalog,
    recs: &Catalog,
    copurchase: &[CoPurchaseRecord],
    cfg: &CurationConfig,
) -> Result<Vec<LabeledPair>> {
    if anchors.is_empty() || recs.is_empty() {
        return Err(Error::Ingestion("both catalogs must be non-empty".into()));
    }
    if cfg.min_count < 1 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    if !(cfg.neg_ratio.is_finite() && cfg.neg_ratio >= 0.0) {
        return Err(Error::Config("neg_ratio must be a non-negative number".into()));
    }
    if let Some(p) = anchors.products.iter().find(|p| recs.get(&p.id).is_some()) {
        return Err(Error::Ingestion(format!(
            "product id {:?} appears in both catalogs",
            p.id
        )));
    }

    let mut logged = HashSet::with_capacity(copurchase.len());
    let mut positives = Vec::new();
    for r in copurchase {
        if anchors.get(&r.anchor_id).is_none() || recs.get(&r.rec_id).is_none() {
            return Err(Error::Ingestion(format!(
                "co-purchase record ({}, {}) does not reference an anchor and a recommendation product",
                r.anchor_id, r.rec_id
            )));
        }
        let key = PairKey::new(&r.anchor_id, &r.rec_id);
        if r.count >= cfg.min_count {
            positives.push(LabeledPair::copurchase(
                key.clone(),
                Label::Positive,
                Some(r.count),
            ));
        }
        logged.insert(key);
    }
    if positives.is_empty() {
        return Err(Error::EmptyPositive {
            min_count: cfg.min_count,
        });
    }

    let target = (cfg.neg_ratio * positives.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let negatives = sample_pairs(anchors, recs, &logged, target, &mut rng)?;
    positives.extend(
        negatives
            .into_iter()
            .map(|k| LabeledPair::copurchase(k, Label::Negative, None)),
    );
    Ok(positives)
}

/// Samples `n` distinct anchor x recommendation pairs uniformly from those not
/// in `exclude`.
pub fn sample_unlabeled(
    anchors: &Catalog,
    recs: &Catalog,
    exclude: &HashSet<PairKey>,
    n: usize,
    seed: u64,
) -> Result<Vec<PairKey>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_pairs(anchors, recs, exclude, n, &mut rng)
}

fn sample_pairs(
    anchors: &Catalog,
    recs: &Catalog,
    exclude: &HashSet<PairKey>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PairKey>> {
    let space = anchors.len() * recs.len();
    let excluded = exclude
        .iter()
        .filter(|k| anchors.get(&k.anchor).is_some() && recs.get(&k.rec).is_some())
        .count();
    let available = space - excluded;
    if n > available {
        return Err(Error::Ingestion(format!(
            "cannot sample {n} pairs: only {available} anchor x recommendation pairs are available"
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if n * 2 > available {
        // dense regime: enumerate and shuffle
        let mut all: Vec<PairKey> = anchors
            .products
            .iter()
            .flat_map(|a| recs.products.iter().map(move |b| PairKey::new(&a.id, &b.id)))
            .filter(|k| !exclude.contains(k))
            .collect();
        all.shuffle(rng);
        all.truncate(n);
        return Ok(all);
    }
    let mut chosen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let a = &anchors.products[rng.gen_range(0..anchors.len())];
        let b = &recs.products[rng.gen_range(0..recs.len())];
        let key = PairKey::new(&a.id, &b.id);
        if exclude.contains(&key) || chosen.contains(&key) {
            continue;
        }
        chosen.insert(key.clone());
        out.push(key);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// train : validation : test.
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Positives eligible for the test partition need at least this
    /// co-purchase count; `None` disables the quality gap.
    pub min_count_test: Option<u32>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [0.7, 0.15, 0.15],
            seed: 0,
            min_count_test: None,
        }
    }
}

/// Stratified train/validation/test split. Each label class is allocated to
/// the partitions by the largest-remainder rule, then partition totals are
/// nudged so that each stays within one element of `n * ratio`.
///
/// The returned `holdout_unlabeled` is empty; it is filled by the caller from
/// pairs outside the labeled set.
pub fn split_dataset(pairs: &[LabeledPair], cfg: &SplitConfig) -> Result<DatasetSplit> {
    let sum: f64 = cfg.ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || cfg.ratios.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::Config(format!(
            "split ratios must be non-negative and sum to 1, got {:?}",
            cfg.ratios
        )));
    }
    if pairs.len() < 10 {
        return Err(Error::Split(format!(
            "need at least 10 pairs to split, got {}",
            pairs.len()
        )));
    }
    let live_parts = cfg.ratios.iter().filter(|r| **r > 0.0).count();
    let pos: Vec<usize> = (0..pairs.len())
        .filter(|&i| pairs[i].label == Label::Positive)
        .collect();
    let neg: Vec<usize> = (0..pairs.len())
        .filter(|&i| pairs[i].label == Label::Negative)
        .collect();
    for (name, class) in [("positive", &pos), ("negative", &neg)] {
        if !class.is_empty() && class.len() < live_parts {
            return Err(Error::Split(format!(
                "too few {name} pairs ({}) to stratify over {live_parts} partitions",
                class.len()
            )));
        }
    }

    let mut alloc = [
        largest_remainder(pos.len(), &cfg.ratios),
        largest_remainder(neg.len(), &cfg.ratios),
    ];
    balance_totals(&mut alloc, pairs.len(), &cfg.ratios);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pos_order = pos;
    pos_order.shuffle(&mut rng);
    let mut neg_order = neg;
    neg_order.shuffle(&mut rng);

    if let Some(threshold) = cfg.min_count_test {
        // stable partition: high-count positives first, so the test slice
        // (taken first below) draws from them
        let (mut eligible, rest): (Vec<usize>, Vec<usize>) = pos_order
            .iter()
            .partition(|&&i| pairs[i].count.is_some_and(|c| c >= threshold));
        if eligible.len() < alloc[0][2] {
            warn!(
                "only {} positives reach min_count_test = {threshold}; filling the test split with lower-count positives",
                eligible.len()
            );
        }
        let test_take = alloc[0][2].min(eligible.len());
        let tail = eligible.split_off(test_take);
        let mut others: Vec<usize> = tail.into_iter().chain(rest).collect();
        others.shuffle(&mut rng);
        pos_order = eligible.into_iter().chain(others).collect();
    }

    let mut parts: [Vec<usize>; 3] = Default::default();
    for (class, order) in [(0, &pos_order), (1, &neg_order)] {
        // test first, then validation, then train
        let mut cursor = order.iter().copied();
        for part in [2, 1, 0] {
            parts[part].extend(cursor.by_ref().take(alloc[class][part]));
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let keys = |idx: &[usize]| idx.iter().map(|&i| pairs[i].pair.clone()).collect();
    let split = DatasetSplit {
        train: keys(&parts[0]),
        validation: keys(&parts[1]),
        test: keys(&parts[2]),
        holdout_unlabeled: Vec::new(),
    };
    split.check_disjoint()?;
    Ok(split)
}

fn largest_remainder(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut out = [0usize; 3];
    for (o, e) in out.iter_mut().zip(&exact) {
        *o = e.floor() as usize;
    }
    let mut remaining = n - out.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    // larger fractional part first, lower index on ties
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            out[i] += 1;
            remaining -= 1;
        }
    }
    out
}

fn balance_totals(alloc: &mut [[usize; 3]; 2], n: usize, ratios: &[f64; 3]) {
    let target: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    loop {
        let dev: Vec<f64> = (0..3)
            .map(|s| (alloc[0][s] + alloc[1][s]) as f64 - target[s])
            .collect();
        let over = (0..3).max_by(|&a, &b| dev[a].partial_cmp(&dev[b]).unwrap()).unwrap();
        let under = (0..3).min_by(|&a, &b| dev[a].partial_cmp(&dev[b]).unwrap()).unwrap();
        if dev[over] <= 1.0 + 1e-9 && dev[under] >= -1.0 - 1e-9 {
            return;
        }
        // move one element of the class more represented in the over-full split
        let class = if alloc[0][over] >= alloc[1][over] { 0 } else { 1 };
        if alloc[class][over] == 0 {
            return;
        }
        alloc[class][over] -= 1;
        alloc[class][under] += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{AttributeValue, Product};
    use std::collections::BTreeMap;

    fn catalog(prefix: &str, category: &str, n: usize) -> Catalog {
        let products = (0..n)
            .map(|i| Product {
                id: format!("{prefix}{i}"),
                category: category.into(),
                name: category.into(),
                attributes: BTreeMap::from([("x".to_string(), AttributeValue::Numerical(i as f64))]),
                description: String::new(),
            })
            .collect();
        Catalog::new(products).unwrap()
    }

    fn rec(a: &str, b: &str, count: u32) -> CoPurchaseRecord {
        CoPurchaseRecord {
            anchor_id: a.into(),
            rec_id: b.into(),
            count,
        }
    }

    #[test]
    fn threshold_filter_on_counts() {
        let a = catalog("a", "fixture", 5);
        let b = catalog("b", "bulb", 5);
        let log = vec![rec("a0", "b0", 5), rec("a1", "b1", 1), rec("a2", "b2", 9)];
        let cfg = CurationConfig {
            min_count: 2,
            neg_ratio: 0.0,
            seed: 1,
        };
        let pairs = build_weak_dataset(&a, &b, &log, &cfg).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|p| p.label == Label::Positive));
    }

    #[test]
    fn negatives_avoid_the_log() {
        let a = catalog("a", "fixture", 3);
        let b = catalog("b", "bulb", 3);
        let log = vec![rec("a0", "b0", 5), rec("a1", "b1", 3), rec("a2", "b2", 1)];
        let cfg = CurationConfig {
            min_count: 3,
            neg_ratio: 1.0,
            seed: 4,
        };
        let pairs = build_weak_dataset(&a, &b, &log, &cfg).unwrap();
        let logged: HashSet<PairKey> = log
            .iter()
            .map(|r| PairKey::new(&r.anchor_id, &r.rec_id))
            .collect();
        let negs: Vec<_> = pairs.iter().filter(|p| p.label == Label::Negative).collect();
        assert_eq!(negs.len(), 2);
        assert!(negs.iter().all(|p| !logged.contains(&p.pair)));
    }

    #[test]
    fn no_positive_is_an_error() {
        let a = catalog("a", "fixture", 2);
        let b = catalog("b", "bulb", 2);
        let log = vec![rec("a0", "b0", 1)];
        let err = build_weak_dataset(&a, &b, &log, &CurationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyPositive { min_count: 3 }));
    }

    #[test]
    fn shared_ids_are_an_ingestion_error() {
        let a = catalog("p", "fixture", 2);
        let b = catalog("p", "bulb", 2);
        let log = vec![rec("p0", "p1", 5)];
        assert!(matches!(
            build_weak_dataset(&a, &b, &log, &CurationConfig::default()),
            Err(Error::Ingestion(_))
        ));
    }

    #[test]
    fn largest_remainder_sums_to_n() {
        for n in 0..200 {
            let a = largest_remainder(n, &[0.7, 0.15, 0.15]);
            assert_eq!(a.iter().sum::<usize>(), n);
        }
    }

    fn labeled(n_pos: usize, n_neg: usize) -> Vec<LabeledPair> {
        (0..n_pos + n_neg)
            .map(|i| {
                let label = if i < n_pos { Label::Positive } else { Label::Negative };
                LabeledPair::copurchase(PairKey::new(format!("a{i}"), format!("b{i}")), label, Some(3))
            })
            .collect()
    }

    #[test]
    fn default_ratios_on_1000_pairs() {
        let pairs = labeled(500, 500);
        let split = split_dataset(&pairs, &SplitConfig::default()).unwrap();
        assert_eq!(
            (split.train.len(), split.validation.len(), split.test.len()),
            (700, 150, 150)
        );
    }

    #[test]
    fn small_balanced_split_keeps_proportions() {
        // oracle: count labels per partition directly
        let pairs = labeled(10, 10);
        let split = split_dataset(&pairs, &SplitConfig::default()).unwrap();
        let positive: HashSet<&PairKey> = pairs
            .iter()
            .filter(|p| p.label == Label::Positive)
            .map(|p| &p.pair)
            .collect();
        for (name, part) in [
            ("train", &split.train),
            ("validation", &split.validation),
            ("test", &split.test),
        ] {
            let share = part.iter().filter(|k| positive.contains(k)).count() as f64
                / part.len() as f64;
            assert!((share - 0.5).abs() <= 0.05, "{name}: {share}");
        }
        for (part, target) in [(&split.train, 14.0), (&split.validation, 3.0), (&split.test, 3.0)] {
            assert!((part.len() as f64 - target).abs() <= 1.0);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let pairs = labeled(40, 60);
        let cfg = SplitConfig {
            seed: 11,
            ..SplitConfig::default()
        };
        assert_eq!(split_dataset(&pairs, &cfg).unwrap(), split_dataset(&pairs, &cfg).unwrap());
    }

    #[test]
    fn too_few_pairs() {
        assert!(matches!(
            split_dataset(&labeled(4, 5), &SplitConfig::default()),
            Err(Error::Split(_))
        ));
        assert!(matches!(
            split_dataset(&labeled(1, 20), &SplitConfig::default()),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn test_split_prefers_high_count_positives() {
        let mut pairs = labeled(100, 100);
        for (i, p) in pairs.iter_mut().enumerate().take(100) {
            p.count = Some(if i < 30 { 10 } else { 3 });
        }
        let cfg = SplitConfig {
            min_count_test: Some(6),
            ..SplitConfig::default()
        };
        let split = split_dataset(&pairs, &cfg).unwrap();
        let high: HashSet<&PairKey> = pairs[..30].iter().map(|p| &p.pair).collect();
        let test_pos: Vec<_> = split
            .test
            .iter()
            .filter(|k| pairs[..100].iter().any(|p| &p.pair == *k))
            .collect();
        assert_eq!(test_pos.len(), 15);
        assert!(test_pos.iter().all(|k| high.contains(k)));
    }
}

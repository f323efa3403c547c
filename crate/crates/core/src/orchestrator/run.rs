use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Ablation, AnnotatorConfig, DataConfig, ErrorSource, ImportanceTarget, RunConfig};
use super::metrics::{accuracy, planted_recovered, IterationMetrics, RunMetrics, SCHEMA_VERSION};
use crate::annotation::{
    append_decisions, write_atomic, AnnotationSession, Annotator, Decision, DecisionReplay, ExamplePair,
    ScriptedAnnotator, SessionItem,
};
use crate::boosting::{select_large_error, BoostState, EnsembleModel};
use crate::catalog::{
    build_weak_dataset, load_copurchase, sample_unlabeled, split_dataset, synth_generate, write_copurchase,
    AttributeValue, Catalog, CoPurchaseRecord, Corpus, CurationConfig, DatasetSplit, Label, LabeledPair, PairKey,
    PlantedRule, Product, SplitConfig, SynthOutput,
};
use crate::error::{Error, Result};
use crate::featurize::{PairEncoder, PairEncoding};
use crate::learner::{train_with_lr_grid, MlpModel, ModelSnapshot, TrainConfig};
use crate::matching::{assign_weak_labels, select_matches, Matcher, MatchScore};
use crate::prompt_rules::{propose_prompt_rule, LmClient, PromptBuilder};
use crate::rules::{CandidateKind, CandidateRule, RuleKey, RuleLedger};
use crate::tree_rules::{
    fit_tree, permutation_importance, propose_tree_rules, MlpEvaluator, PermutationPlan, Proposal,
    ProposalConfig, ProposalViews, RuleIdAllocator,
};

type Latent = BTreeMap<String, BTreeMap<String, AttributeValue>>;

/// Derives an independent seed for one stage of the run.
pub fn sub_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(seed ^ h ^ splitmix(index))
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Ready to train the next model.
    Training,
    /// Waiting for the current session's decisions.
    Annotation,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub iteration: usize,
    pub alpha: f64,
    /// Whether the model votes in the ensemble.
    pub included: bool,
    pub model: ModelSnapshot,
}

/// Everything that changes between stages. Persisted as `state.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub schema_version: u32,
    pub stage: Stage,
    /// Last iteration begun (0 before the first).
    pub iteration: usize,
    pub boost: BoostState,
    pub ledger: RuleLedger,
    pub ids: RuleIdAllocator,
    pub minted: Vec<LabeledPair>,
    pub unlabeled: Vec<PairKey>,
    pub members: Vec<Member>,
    pub metrics: Vec<IterationMetrics>,
    pub pending: Option<IterationMetrics>,
    pub session: Option<AnnotationSession>,
    pub lm_degraded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub labeled: Vec<LabeledPair>,
    pub split: DatasetSplit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    version: String,
    seed: u64,
    ablation: String,
    init: String,
}

/// Cached encodings of the fixed partitions.
struct Partitions {
    train_keys: Vec<PairKey>,
    train_labels: Vec<Label>,
    train_raw: Vec<PairEncoding>,
    train_x: Vec<Vec<f64>>,
    validation: Vec<(Vec<f64>, Label)>,
    test: Vec<(Vec<f64>, Label)>,
}

/// A run directory plus the loop state. Every stage works on a copy of the
/// state and commits it only after its artifacts are written, so a failed
/// stage leaves the run where it was.
pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub corpus: Corpus,
    pub encoder: PairEncoder,
    pub dataset: Dataset,
    pub truth: Vec<PlantedRule>,
    latent: Option<Latent>,
    parts: Partitions,
    pub state: RunState,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::file(path, e))
}

impl Run {
    /// Materializes the data, curates and splits the weak dataset, fits the
    /// encoder and writes a fresh run directory.
    pub fn create(config: RunConfig) -> Result<Run> {
        config.validate()?;
        let dir = config.run_dir.clone();
        if dir.join("state.json").exists() {
            return Err(Error::State(format!("{} already holds a run", dir.display())));
        }
        let data_dir = dir.join("data");
        mkdir(&data_dir)?;

        let (anchors, recs, copurchase, truth, latent) = match &config.data {
            DataConfig::Synth { synth } => {
                let out = synth_generate(synth)?;
                (out.anchors, out.recs, out.copurchase, out.truth_rules, Some(out.latent))
            }
            DataConfig::Files {
                anchors,
                recs,
                copurchase,
                truth,
            } => {
                let truth = match truth {
                    Some(p) => read_json(p)?,
                    None => Vec::new(),
                };
                (
                    Catalog::load_jsonl(anchors)?,
                    Catalog::load_jsonl(recs)?,
                    load_copurchase(copurchase)?,
                    truth,
                    None,
                )
            }
        };
        anchors.write_jsonl(data_dir.join("anchors.jsonl"))?;
        recs.write_jsonl(data_dir.join("recs.jsonl"))?;
        write_copurchase(data_dir.join("copurchase.csv"), &copurchase)?;
        write_json(&data_dir.join("rules_truth.json"), &truth)?;
        if let Some(l) = &latent {
            write_json(&data_dir.join("latent.json"), l)?;
        }

        let dataset = curate(&config, &anchors, &recs, &copurchase)?;
        write_json(&data_dir.join("dataset.json"), &dataset)?;
        let corpus = Corpus::new(anchors, recs)?;

        let mut train_pairs = Vec::with_capacity(dataset.split.train.len());
        for k in &dataset.split.train {
            train_pairs.push(corpus.pair(k)?);
        }
        let encoder = PairEncoder::fit(&corpus.anchors.schema, &corpus.recs.schema, train_pairs)?;
        write_atomic(&dir.join("encoding.json"), encoder.to_json()?.as_bytes())?;

        write_json(&dir.join("config.json"), &config)?;
        write_json(
            &dir.join("manifest.json"),
            &Manifest {
                schema_version: SCHEMA_VERSION,
                version: env!("CARGO_PKG_VERSION").into(),
                seed: config.seed,
                ablation: config.ablation.as_str().into(),
                init: "uniform fan-in U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases".into(),
            },
        )?;

        let state = RunState {
            schema_version: SCHEMA_VERSION,
            stage: Stage::Training,
            iteration: 0,
            boost: BoostState::new(dataset.split.train.len())?,
            ledger: RuleLedger::default(),
            ids: RuleIdAllocator::default(),
            minted: Vec::new(),
            unlabeled: dataset.split.holdout_unlabeled.clone(),
            members: Vec::new(),
            metrics: Vec::new(),
            pending: None,
            session: None,
            lm_degraded: 0,
        };
        write_json(&dir.join("state.json"), &state)?;
        Run::assemble(dir, config, corpus, encoder, dataset, truth, latent, state)
    }

    /// Reopens an existing run directory.
    pub fn open(dir: impl AsRef<Path>) -> Result<Run> {
        let dir = dir.as_ref().to_path_buf();
        let state: RunState = read_json(&dir.join("state.json"))?;
        if state.schema_version != SCHEMA_VERSION {
            return Err(Error::State(format!(
                "state schema {} is not supported (expected {SCHEMA_VERSION})",
                state.schema_version
            )));
        }
        let mut config: RunConfig = read_json(&dir.join("config.json"))?;
        config.run_dir = dir.clone();
        let data_dir = dir.join("data");
        let corpus = Corpus::new(
            Catalog::load_jsonl(data_dir.join("anchors.jsonl"))?,
            Catalog::load_jsonl(data_dir.join("recs.jsonl"))?,
        )?;
        let dataset: Dataset = read_json(&data_dir.join("dataset.json"))?;
        let truth: Vec<PlantedRule> = read_json(&data_dir.join("rules_truth.json"))?;
        let latent_path = data_dir.join("latent.json");
        let latent = if latent_path.exists() {
            Some(read_json(&latent_path)?)
        } else {
            None
        };
        let encoding_path = dir.join("encoding.json");
        let text = fs::read_to_string(&encoding_path).map_err(|e| Error::file(&encoding_path, e))?;
        let encoder = PairEncoder::from_json(&text)?;
        Run::assemble(dir, config, corpus, encoder, dataset, truth, latent, state)
    }

    /// Opens the run in `config.run_dir` when it exists, else creates it.
    pub fn open_or_create(config: RunConfig) -> Result<Run> {
        if config.run_dir.join("state.json").exists() {
            Run::open(&config.run_dir)
        } else {
            Run::create(config)
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        dir: PathBuf,
        config: RunConfig,
        corpus: Corpus,
        encoder: PairEncoder,
        dataset: Dataset,
        truth: Vec<PlantedRule>,
        latent: Option<Latent>,
        state: RunState,
    ) -> Result<Run> {
        let labels: BTreeMap<&PairKey, Label> = dataset.labeled.iter().map(|p| (&p.pair, p.label)).collect();
        let label_of = |k: &PairKey| {
            labels
                .get(k)
                .copied()
                .ok_or_else(|| Error::State(format!("pair {k} has no weak label")))
        };
        let encode = |k: &PairKey| -> Result<PairEncoding> {
            let (a, b) = corpus.pair(k)?;
            Ok(encoder.encode_pair(a, b))
        };
        let mut train_labels = Vec::new();
        let mut train_raw = Vec::new();
        for k in &dataset.split.train {
            train_labels.push(label_of(k)?);
            train_raw.push(encode(k)?);
        }
        let train_x = train_raw.iter().map(|e| encoder.model_input(e)).collect();
        let fixed = |keys: &[PairKey]| -> Result<Vec<(Vec<f64>, Label)>> {
            keys.iter()
                .map(|k| Ok((encoder.model_input(&encode(k)?), label_of(k)?)))
                .collect()
        };
        let validation = fixed(&dataset.split.validation)?;
        let test = fixed(&dataset.split.test)?;
        if state.boost.weights.len() != train_labels.len() {
            return Err(Error::State("boosting weights do not match the labeled set".into()));
        }
        let parts = Partitions {
            train_keys: dataset.split.train.clone(),
            train_labels,
            train_raw,
            train_x,
            validation,
            test,
        };
        Ok(Run {
            dir,
            config,
            corpus,
            encoder,
            dataset,
            truth,
            latent,
            parts,
            state,
        })
    }

    pub fn planned_iterations(&self) -> usize {
        self.config.iterations
    }

    fn budget_for(&self, t: usize) -> usize {
        match self.config.ablation {
            Ablation::OnlyBoosting => 0,
            Ablation::NoEnsemble if t == 1 => self.config.budget * self.config.iterations,
            Ablation::NoEnsemble => 0,
            _ => self.config.budget,
        }
    }

    fn cap_for(&self, t: usize) -> usize {
        match self.config.ablation {
            Ablation::NoEnsemble if t == 1 => self.config.cap * self.config.iterations,
            // later iterations train on the fixed augmented set
            Ablation::NoEnsemble => 0,
            _ => self.config.cap,
        }
    }

    fn builder(&self) -> PromptBuilder {
        PromptBuilder {
            max_description_chars: self.config.max_description_chars,
        }
    }

    fn iteration_dir(&self, t: usize) -> Result<PathBuf> {
        let d = self.dir.join("iterations").join(format!("t{t:02}"));
        mkdir(&d)?;
        Ok(d)
    }

    fn persist(&self, state: &RunState) -> Result<()> {
        write_json(&self.dir.join("state.json"), state)
    }

    pub fn session(&self) -> Option<&AnnotationSession> {
        self.state.session.as_ref()
    }

    fn models(&self, state: &RunState) -> Result<Vec<MlpModel>> {
        state.members.iter().map(|m| MlpModel::from_snapshot(&m.model)).collect()
    }

    fn ensemble_of(&self, state: &RunState, models: &[MlpModel]) -> EnsembleModel<MlpModel> {
        let mut e = EnsembleModel::default();
        for (m, model) in state.members.iter().zip(models) {
            if m.included {
                e.push(model.clone(), m.alpha);
            }
        }
        e
    }

    /// Trains the next weak model, updates the instance weights, mines
    /// candidate rules from the large-error instances and opens the
    /// annotation session.
    pub fn begin_iteration(&mut self, client: &impl LmClient) -> Result<()> {
        if self.state.stage != Stage::Training {
            return Err(Error::State(format!("cannot train in stage {:?}", self.state.stage)));
        }
        let mut next = self.state.clone();
        let t = next.iteration + 1;
        let cfg = &self.config;
        let dir = self.iteration_dir(t)?;
        log::info!("iteration {t}: training on {} labeled + {} minted pairs", self.parts.train_x.len(), next.minted.len());

        // train m_t on the labeled set plus every minted positive
        let mut train: Vec<(Vec<f64>, Label)> = self
            .parts
            .train_x
            .iter()
            .cloned()
            .zip(self.parts.train_labels.iter().copied())
            .collect();
        for p in &next.minted {
            let (a, b) = self.corpus.pair(&p.pair)?;
            train.push((self.encoder.model_input(&self.encoder.encode_pair(a, b)), p.label));
        }
        let train_cfg = TrainConfig {
            seed: sub_seed(cfg.seed, "train", t as u64),
            ..cfg.train.clone()
        };
        let outcome = train_with_lr_grid(&train, &self.parts.validation, &train_cfg, &cfg.learning_rates)?;
        let model = outcome.model;
        write_json(&dir.join("model.json"), &model.snapshot())?;

        // weighted error and weight update over the labeled set
        let prev_models = self.models(&next)?;
        let prev_ensemble = self.ensemble_of(&next, &prev_models);
        let model_preds: Vec<Label> = self
            .parts
            .train_x
            .iter()
            .map(|x| model.predict(x).map(|p| p.0))
            .collect::<Result<_>>()?;
        let preds = match cfg.error_source {
            ErrorSource::Ensemble if !prev_ensemble.is_empty() => self
                .parts
                .train_x
                .iter()
                .map(|x| prev_ensemble.predict(x))
                .collect::<Result<Vec<_>>>()?,
            _ => model_preds,
        };
        let record = next.boost.step(&preds, &self.parts.train_labels)?;
        write_json(&dir.join("weights.json"), &next.boost.weights)?;

        next.members.push(Member {
            iteration: t,
            alpha: record.alpha,
            included: !(cfg.drop_weak_models && record.alpha <= 0.0),
            model: model.snapshot(),
        });

        // candidate rules from the large-error instances
        let budget = self.budget_for(t);
        let mut items = Vec::new();
        let large = select_large_error(&next.boost.weights, cfg.top_n);
        if budget > 0 {
            let subset: Vec<(PairEncoding, Label)> = large
                .iter()
                .map(|&i| (self.parts.train_raw[i].clone(), self.parts.train_labels[i]))
                .collect();
            let tree = fit_tree(&subset, cfg.tree_depth, sub_seed(cfg.seed, "tree", t as u64))?;
            write_json(&dir.join("tree.json"), &tree)?;
            let plan = PermutationPlan::new(
                subset.len(),
                self.encoder.dim(),
                cfg.repeats,
                sub_seed(cfg.seed, "permute", t as u64),
            );
            let importances = match cfg.importance_target {
                ImportanceTarget::Tree => permutation_importance(&tree, &subset, &plan)?,
                ImportanceTarget::Mlp => {
                    let ev = MlpEvaluator {
                        model: &model,
                        encoder: &self.encoder,
                    };
                    permutation_importance(&ev, &subset, &plan)?
                }
            };
            write_json(&dir.join("importance.json"), &importances)?;

            let views = match cfg.ablation {
                Ablation::OnlyAttributes => ProposalViews::AttributesOnly,
                Ablation::OnlyDescription => ProposalViews::DescriptionOnly,
                _ => ProposalViews::Both,
            };
            let sparsity = self
                .encoder
                .column_sparsity(&self.corpus.anchors.schema, &self.corpus.recs.schema);
            let mut seen = next.ledger.seen();
            let proposals = propose_tree_rules(
                &importances,
                &self.encoder.layout,
                &sparsity,
                &seen,
                &ProposalConfig {
                    budget,
                    sparse_threshold: cfg.sparse_threshold,
                    views,
                    iteration: t,
                },
                &mut next.ids,
            );
            let builder = self.builder();
            for p in proposals {
                let rule = match p {
                    Proposal::Tree(rule) => rule,
                    Proposal::Prompt { attribute, feature, mu } => {
                        match self.prompt_candidate(client, &builder, &large, &attribute, mu, feature, t, &seen, &mut next)? {
                            Some(rule) => rule,
                            None => continue,
                        }
                    }
                };
                seen.insert(rule.kind.key());
                let examples = self.examples(&rule, &large, &next.boost.weights)?;
                let prompt_text = match &rule.kind {
                    CandidateKind::Prompt(p) => Some(p.filled_text.clone()),
                    _ => None,
                };
                items.push(SessionItem {
                    rule,
                    examples,
                    prompt_text,
                });
            }
        }
        write_json(
            &dir.join("candidates.json"),
            &items.iter().map(|i| &i.rule).collect::<Vec<_>>(),
        )?;
        let session = AnnotationSession::open(t, items, budget)?;
        session.save(dir.join("session.json"))?;

        let models = self.models(&next)?;
        let ensemble = self.ensemble_of(&next, &models);
        let acc = |data: &[(Vec<f64>, Label)], f: &dyn Fn(&[f64]) -> Result<Label>| -> Result<f64> {
            let preds = data.iter().map(|(x, _)| f(x)).collect::<Result<Vec<_>>>()?;
            let labels: Vec<Label> = data.iter().map(|(_, y)| *y).collect();
            Ok(accuracy(&preds, &labels))
        };
        let by_model = |x: &[f64]| model.predict(x).map(|p| p.0);
        let by_ensemble = |x: &[f64]| ensemble.predict(x);
        next.pending = Some(IterationMetrics {
            iteration: t,
            err_raw: record.err_raw,
            err: record.err,
            alpha: record.alpha,
            misclassified: record.misclassified,
            learning_rate: outcome.learning_rate,
            best_epoch: outcome.best_epoch,
            train_size: train.len(),
            candidates: session.items.len(),
            accepted: 0,
            minted: 0,
            minted_precision: None,
            unlabeled_remaining: next.unlabeled.len(),
            model_validation_accuracy: acc(&self.parts.validation, &by_model)?,
            model_test_accuracy: acc(&self.parts.test, &by_model)?,
            ensemble_validation_accuracy: acc(&self.parts.validation, &by_ensemble)?,
            ensemble_test_accuracy: acc(&self.parts.test, &by_ensemble)?,
            planted_recovered: 0,
            lm_degraded: 0,
        });
        next.iteration = t;
        next.stage = Stage::Annotation;
        next.session = Some(session);
        self.persist(&next)?;
        self.state = next;
        Ok(())
    }

    /// Builds a prompt candidate for a sparse attribute from the heaviest
    /// large-error pair whose statement is not yet known.
    #[allow(clippy::too_many_arguments)]
    fn prompt_candidate(
        &self,
        client: &impl LmClient,
        builder: &PromptBuilder,
        large: &[usize],
        attribute: &str,
        mu: f64,
        feature: usize,
        t: usize,
        seen: &BTreeSet<RuleKey>,
        next: &mut RunState,
    ) -> Result<Option<CandidateRule>> {
        for &i in large {
            let key = &self.parts.train_keys[i];
            let (a, b) = self.corpus.pair(key)?;
            let mut ids = next.ids.clone();
            let id = ids.allocate(t);
            match propose_prompt_rule(client, builder, a, b, self.parts.train_labels[i], attribute, mu, feature, id, t) {
                Ok(rule) => {
                    if !seen.contains(&rule.kind.key()) {
                        next.ids = ids;
                        return Ok(Some(rule));
                    }
                }
                Err(Error::PromptUnavailable(_)) => continue,
                Err(e) if e.is_retryable() => {
                    log::warn!("prompt candidate for {attribute:?} skipped: {e}");
                    next.lm_degraded += 1;
                    return Ok(None);
                }
                Err(e) => return Err(e),
            }
        }
        log::info!("no new prompt statement for {attribute:?} among the large-error pairs");
        Ok(None)
    }

    fn examples(&self, rule: &CandidateRule, large: &[usize], weights: &[f64]) -> Result<Vec<ExamplePair>> {
        let observed = |a: &Product, b: &Product| match &rule.kind {
            CandidateKind::ExactMatch { attribute } => {
                !a.attribute(attribute).is_missing() && !b.attribute(attribute).is_missing()
            }
            CandidateKind::Range {
                anchor_attribute,
                rec_attribute,
                ..
            } => !a.attribute(anchor_attribute).is_missing() && !b.attribute(rec_attribute).is_missing(),
            CandidateKind::Contain { .. } | CandidateKind::Prompt(_) => true,
        };
        let mut order: Vec<usize> = Vec::new();
        if let CandidateKind::Prompt(p) = &rule.kind {
            if let Some(i) = self.parts.train_keys.iter().position(|k| *k == p.source_pair) {
                order.push(i);
            }
        }
        let first = order.first().copied();
        order.extend(large.iter().copied().filter(|i| Some(*i) != first));
        let mut out = Vec::new();
        for i in order {
            if out.len() >= self.config.examples_per_candidate {
                break;
            }
            let key = &self.parts.train_keys[i];
            let (a, b) = self.corpus.pair(key)?;
            if !observed(a, b) {
                continue;
            }
            out.push(ExamplePair {
                pair: key.clone(),
                label: self.parts.train_labels[i],
                weight: weights[i],
                anchor: a.clone(),
                rec: b.clone(),
            });
        }
        Ok(out)
    }

    /// Records decisions for the open session and appends the new ones to
    /// `decisions.jsonl`. Returns how many were new.
    pub fn submit(&mut self, decisions: Vec<Decision>) -> Result<usize> {
        let mut next = self.state.clone();
        let session = next
            .session
            .as_mut()
            .filter(|s| s.is_open())
            .ok_or_else(|| Error::State("no open annotation session".into()))?;
        let mut fresh = Vec::new();
        for d in decisions {
            if session.submit(d.clone())? {
                fresh.push(d);
            }
        }
        if !fresh.is_empty() {
            append_decisions(self.dir.join("decisions.jsonl"), &fresh)?;
            self.persist(&next)?;
            self.state = next;
        }
        Ok(fresh.len())
    }

    /// Finalizes the session, matches the accepted rules over the unlabeled
    /// pool and mints weak positives for the next model.
    pub fn complete_iteration(&mut self, client: &impl LmClient) -> Result<()> {
        if self.state.stage != Stage::Annotation {
            return Err(Error::State(format!("no iteration awaits completion (stage {:?})", self.state.stage)));
        }
        let mut next = self.state.clone();
        let t = next.iteration;
        let dir = self.iteration_dir(t)?;
        let session = next
            .session
            .as_mut()
            .ok_or_else(|| Error::State("annotation stage without a session".into()))?;
        let accepted = session.finalize()?;
        let rejected = session.rejected.clone();
        session.save(dir.join("session.json"))?;
        next.ledger.record(&accepted, &rejected)?;
        write_json(&dir.join("rules.json"), &accepted)?;

        let rules = next.ledger.accepted.clone();
        let cap = self.cap_for(t);
        let mut minted = Vec::new();
        let mut degraded = 0;
        if !rules.is_empty() && cap > 0 && !next.unlabeled.is_empty() {
            let builder = self.builder();
            let mut matcher = Matcher::new(&self.encoder.layout, client, &builder);
            let mut scores: Vec<MatchScore> = Vec::with_capacity(next.unlabeled.len());
            for key in &next.unlabeled {
                let (a, b) = self.corpus.pair(key)?;
                let enc = self.encoder.encode_pair(a, b);
                scores.push(matcher.score_pair(&rules, key, a, b, &enc)?);
            }
            degraded = matcher.degraded;
            minted = assign_weak_labels(&scores, self.config.theta, cap, t)?;
            write_json(&dir.join("matches.json"), &select_matches(&scores, self.config.theta, cap))?;
        }
        let taken: HashSet<&PairKey> = minted.iter().map(|p| &p.pair).collect();
        next.unlabeled.retain(|k| !taken.contains(k));
        next.lm_degraded += degraded;

        let mut m = next
            .pending
            .take()
            .ok_or_else(|| Error::State("iteration metrics missing".into()))?;
        m.accepted = accepted.len();
        m.minted = minted.len();
        m.minted_precision = self.precision(&minted);
        m.unlabeled_remaining = next.unlabeled.len();
        m.planted_recovered = planted_recovered(&self.truth, &next.ledger.accepted);
        m.lm_degraded = next.lm_degraded;
        write_json(&dir.join("metrics.json"), &m)?;
        next.metrics.push(m);
        next.minted.extend(minted);

        write_json(&self.dir.join("rules.json"), &next.ledger)?;
        next.session = None;
        next.stage = if t >= self.planned_iterations() {
            Stage::Done
        } else {
            Stage::Training
        };
        if next.stage == Stage::Done {
            write_json(&self.dir.join("metrics.json"), &self.summary(&next)?)?;
        }
        self.persist(&next)?;
        self.state = next;
        Ok(())
    }

    fn precision(&self, minted: &[LabeledPair]) -> Option<f64> {
        let latent = self.latent.as_ref()?;
        if minted.is_empty() || self.truth.is_empty() {
            return None;
        }
        let oracle = SynthOutput {
            anchors: self.corpus.anchors.clone(),
            recs: self.corpus.recs.clone(),
            copurchase: Vec::new(),
            truth_rules: self.truth.clone(),
            latent: latent.clone(),
        };
        let hits = minted.iter().filter(|p| oracle.is_compatible(&p.pair)).count();
        Some(hits as f64 / minted.len() as f64)
    }

    fn summary(&self, state: &RunState) -> Result<RunMetrics> {
        let last = state.metrics.last().ok_or(Error::EmptyDataset)?;
        let (final_val, final_test) = match self.config.ablation {
            Ablation::NoEnsemble => (last.model_validation_accuracy, last.model_test_accuracy),
            _ => (last.ensemble_validation_accuracy, last.ensemble_test_accuracy),
        };
        Ok(RunMetrics {
            schema_version: SCHEMA_VERSION,
            seed: self.config.seed,
            ablation: self.config.ablation.as_str().into(),
            labeled: self.dataset.split.train.len(),
            validation: self.dataset.split.validation.len(),
            test: self.dataset.split.test.len(),
            unlabeled: self.dataset.split.holdout_unlabeled.len(),
            first_model_test_accuracy: state.metrics[0].model_test_accuracy,
            final_validation_accuracy: final_val,
            final_test_accuracy: final_test,
            rules_accepted: state.ledger.accepted.len(),
            rules_rejected: state.ledger.rejected.len(),
            minted_total: state.minted.len(),
            planted_total: self.truth.len(),
            planted_recovered: last.planted_recovered,
            iterations: state.metrics.clone(),
        })
    }

    /// The run summary; available once the run is done.
    pub fn metrics(&self) -> Result<RunMetrics> {
        if self.state.stage != Stage::Done {
            return Err(Error::State("run is not finished".into()));
        }
        self.summary(&self.state)
    }

    /// Accuracy of the final predictor (the ensemble, or the last model for
    /// the no-ensemble ablation) on a partition.
    pub fn evaluate(&self, split: &str) -> Result<f64> {
        let data: Vec<(Vec<f64>, Label)> = match split {
            "train" => self
                .parts
                .train_x
                .iter()
                .cloned()
                .zip(self.parts.train_labels.iter().copied())
                .collect(),
            "validation" => self.parts.validation.clone(),
            "test" => self.parts.test.clone(),
            other => return Err(Error::Config(format!("unknown split {other:?}"))),
        };
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let models = self.models(&self.state)?;
        if models.is_empty() {
            return Err(Error::State("no model has been trained yet".into()));
        }
        let preds = match self.config.ablation {
            Ablation::NoEnsemble => {
                let last = &models[models.len() - 1];
                data.iter().map(|(x, _)| last.predict(x).map(|p| p.0)).collect::<Result<Vec<_>>>()?
            }
            _ => {
                let e = self.ensemble_of(&self.state, &models);
                data.iter().map(|(x, _)| e.predict(x)).collect::<Result<Vec<_>>>()?
            }
        };
        let labels: Vec<Label> = data.iter().map(|(_, y)| *y).collect();
        Ok(accuracy(&preds, &labels))
    }

    /// The annotator named by the config; interactive runs have none.
    pub fn annotator(&self) -> Result<Box<dyn Annotator>> {
        match &self.config.annotator {
            AnnotatorConfig::Scripted => {
                if self.truth.is_empty() {
                    log::warn!("scripted annotation without ground-truth rules rejects every candidate");
                }
                Ok(Box::new(ScriptedAnnotator::new(self.truth.clone())))
            }
            AnnotatorConfig::Decisions { path } => Ok(Box::new(DecisionReplay::from_file(path)?)),
            AnnotatorConfig::Interactive => Err(Error::Config(
                "interactive runs take decisions through the annotation service".into(),
            )),
        }
    }

    /// Drives the loop to the end with `annotator` answering every session.
    pub fn run_headless(&mut self, client: &impl LmClient, annotator: &mut dyn Annotator) -> Result<RunMetrics> {
        loop {
            match self.state.stage {
                Stage::Done => return self.metrics(),
                Stage::Training => self.begin_iteration(client)?,
                Stage::Annotation => {
                    let session = self
                        .session()
                        .ok_or_else(|| Error::State("annotation stage without a session".into()))?;
                    if session.is_open() {
                        let decisions = annotator.decide(session)?;
                        self.submit(decisions)?;
                    }
                    self.complete_iteration(client)?;
                }
            }
        }
    }
}

/// Curates the weak dataset, splits it, and fills the unlabeled pool with
/// the below-threshold co-purchase pairs (plus optional random pairs).
fn curate(config: &RunConfig, anchors: &Catalog, recs: &Catalog, copurchase: &[CoPurchaseRecord]) -> Result<Dataset> {
    let c = &config.curation;
    let labeled = build_weak_dataset(
        anchors,
        recs,
        copurchase,
        &CurationConfig {
            min_count: c.min_count,
            neg_ratio: c.neg_ratio,
            seed: sub_seed(config.seed, "curate", 0),
        },
    )?;
    let mut split = split_dataset(
        &labeled,
        &SplitConfig {
            ratios: c.ratios,
            seed: sub_seed(config.seed, "split", 0),
            min_count_test: Some(c.min_count_test.unwrap_or(2 * c.min_count)),
        },
    )?;
    let labeled_keys: HashSet<PairKey> = labeled.iter().map(|p| p.pair.clone()).collect();
    let mut taken = labeled_keys.clone();
    let mut unlabeled = Vec::new();
    for r in copurchase.iter().filter(|r| r.count < c.min_count) {
        let k = PairKey::new(&r.anchor_id, &r.rec_id);
        if anchors.get(&k.anchor).is_some() && recs.get(&k.rec).is_some() && taken.insert(k.clone()) {
            unlabeled.push(k);
        }
    }
    if c.extra_unlabeled > 0 {
        // never-purchased pairs only
        for r in copurchase {
            taken.insert(PairKey::new(&r.anchor_id, &r.rec_id));
        }
        unlabeled.extend(sample_unlabeled(
            anchors,
            recs,
            &taken,
            c.extra_unlabeled,
            sub_seed(config.seed, "unlabeled", 0),
        )?);
    }
    split.holdout_unlabeled = unlabeled;
    split.check_disjoint()?;
    Ok(Dataset { labeled, split })
}

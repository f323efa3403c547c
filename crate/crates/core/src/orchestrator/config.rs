use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::SynthConfig;
use crate::error::{Error, Result};
use crate::learner::{TrainConfig, LEARNING_RATE_GRID};
use crate::tree_rules::{MAX_DEPTH, MIN_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    OnlyAttributes,
    OnlyDescription,
    OnlyBoosting,
    NoEnsemble,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Config(format!("unknown ablation mode {s:?}")))
    }
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::OnlyAttributes => "only-attributes",
            Ablation::OnlyDescription => "only-description",
            Ablation::OnlyBoosting => "only-boosting",
            Ablation::NoEnsemble => "no-ensemble",
        }
    }
}

/// Which model is permuted when ranking features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceTarget {
    Tree,
    Mlp,
}

/// Whose predictions drive the weighted error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSource {
    /// The model trained in this iteration.
    Model,
    /// The ensemble of the previous iterations (the new model in iteration 1).
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synth {
        synth: SynthConfig,
    },
    Files {
        anchors: PathBuf,
        recs: PathBuf,
        copurchase: PathBuf,
        #[serde(default)]
        truth: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AnnotatorConfig {
    /// Ground-truth driven annotator (needs planted rules).
    Scripted,
    /// Replay a decisions file.
    Decisions { path: PathBuf },
    /// Wait for decisions through the annotation service.
    Interactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationSettings {
    pub min_count: u32,
    pub neg_ratio: f64,
    pub ratios: [f64; 3],
    /// Count threshold for test positives; defaults to twice `min_count`.
    pub min_count_test: Option<u32>,
    /// Random never-purchased pairs added to the unlabeled pool on top of the
    /// below-threshold co-purchase pairs.
    pub extra_unlabeled: usize,
}

impl Default for CurationSettings {
    fn default() -> Self {
        CurationSettings {
            min_count: 3,
            neg_ratio: 1.0,
            ratios: [0.7, 0.15, 0.15],
            min_count_test: None,
            extra_unlabeled: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_dir: PathBuf,
    pub seed: u64,
    pub data: DataConfig,
    pub curation: CurationSettings,
    /// Number of boosting iterations.
    pub iterations: usize,
    /// Candidates shown per iteration.
    pub budget: usize,
    /// Large-error instances per iteration.
    pub top_n: usize,
    pub tree_depth: usize,
    /// Permutation repeats.
    pub repeats: usize,
    pub sparse_threshold: f64,
    /// Minimum normalized match score for a weak positive.
    pub theta: f64,
    /// Weak positives minted per iteration at most.
    pub cap: usize,
    pub ablation: Ablation,
    pub importance_target: ImportanceTarget,
    pub error_source: ErrorSource,
    /// Leave models with non-positive coefficient out of the ensemble.
    pub drop_weak_models: bool,
    /// Learning rates tried per iteration; the lowest validation loss wins.
    pub learning_rates: Vec<f64>,
    pub train: TrainConfig,
    pub max_description_chars: usize,
    pub examples_per_candidate: usize,
    pub annotator: AnnotatorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run_dir: PathBuf::from("runs/default"),
            seed: 0,
            data: DataConfig::Synth {
                synth: SynthConfig::planted_benchmark(0),
            },
            curation: CurationSettings::default(),
            iterations: 10,
            budget: 10,
            top_n: 300,
            tree_depth: 5,
            repeats: 10,
            sparse_threshold: 0.5,
            theta: 0.6,
            cap: 500,
            ablation: Ablation::Full,
            importance_target: ImportanceTarget::Tree,
            error_source: ErrorSource::Model,
            drop_weak_models: false,
            learning_rates: LEARNING_RATE_GRID.to_vec(),
            train: TrainConfig::default(),
            max_description_chars: 512,
            examples_per_candidate: 3,
            annotator: AnnotatorConfig::Scripted,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        // relative data paths are read from the config's directory
        if let (DataConfig::Files { anchors, recs, copurchase, truth }, Some(base)) =
            (&mut cfg.data, path.parent())
        {
            for p in [Some(anchors), Some(recs), Some(copurchase), truth.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations < 1 {
            return bad("iterations must be at least 1".into());
        }
        if self.budget < 1 {
            return bad("budget must be at least 1".into());
        }
        if self.top_n < 1 {
            return bad("top_n must be at least 1".into());
        }
        if !(MIN_DEPTH..=MAX_DEPTH).contains(&self.tree_depth) {
            return bad(format!("tree_depth must be within [{MIN_DEPTH}, {MAX_DEPTH}]"));
        }
        if self.repeats < 1 {
            return bad("repeats must be at least 1".into());
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return bad("theta must be in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.sparse_threshold) {
            return bad("sparse_threshold must be in [0, 1]".into());
        }
        if self.learning_rates.is_empty() || self.learning_rates.iter().any(|lr| !(*lr > 0.0)) {
            return bad("learning_rates must be a non-empty list of positive rates".into());
        }
        if self.examples_per_candidate < 1 {
            return bad("examples_per_candidate must be at least 1".into());
        }
        self.train.validate()
    }
}

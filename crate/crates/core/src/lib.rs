//! Adaptive multi-view rule discovery for weakly-supervised compatible-product
//! prediction.
//!
//! The pipeline runs a boosting-style loop over a weakly labeled dataset curated
//! from co-purchase logs. Every iteration trains a small MLP, re-weights the
//! labeled instances, mines candidate labeling rules from the large-error
//! instances (decision trees plus permutation importance over structured
//! attributes, masked-token prompting over descriptions for sparse attributes),
//! routes them through rule-level annotation, and mints new weak positives by
//! matching the accepted rules against unlabeled pairs. The per-iteration
//! models are combined into a weighted ensemble.
//!
//! Module map:
//!
//! - [`catalog`]: products, co-purchase logs, weak dataset curation, splits,
//!   synthetic planted-rule benchmarks.
//! - [`featurize`]: the concatenated pairwise feature vector.
//! - [`learner`]: the per-iteration MLP trained with AdamW.
//! - [`boosting`]: instance weights, weighted error, model coefficients,
//!   large-error selection, ensemble prediction.
//! - [`tree_rules`]: Gini decision trees, permutation importance, rule
//!   prototypes.
//! - [`prompt_rules`]: prompt templating, the language-model client interface
//!   and its deterministic stub.
//! - [`annotation`]: rule-level annotation sessions.
//! - [`matching`]: rule matching scores and weak-label minting.
//! - [`orchestrator`]: the iteration driver, run directory, metrics.

pub mod annotation;
pub mod boosting;
pub mod catalog;
pub mod error;
pub mod featurize;
pub mod learner;
pub mod matching;
pub mod orchestrator;
pub mod prompt_rules;
pub mod rules;
pub mod tree_rules;

pub use error::{Error, Result};

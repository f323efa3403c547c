//! The iteration driver: run directory, loop state, metrics.

mod config;
mod metrics;
mod run;

pub use config::{
    Ablation, AnnotatorConfig, CurationSettings, DataConfig, ErrorSource, ImportanceTarget, RunConfig,
};
pub use metrics::{accuracy, planted_recovered, recovers, IterationMetrics, RunMetrics, SCHEMA_VERSION};
pub use run::{sub_seed, Dataset, Member, Run, RunState, Stage};

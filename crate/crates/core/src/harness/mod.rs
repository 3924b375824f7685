//! The outer learning loop: configuration, rollouts, traces and policy
//! bundles.

mod bundle;
mod config;
mod run;
mod trace;

pub use bundle::{EvalSummary, GpRecord, OptionRecord, PolicyBundle};
pub use config::{
    EmbeddingSection, EnvironmentConfig, FeatureConfig, GpConfig, HpsdeConfig, MixtureConfig,
    UpdateConfig,
};
pub use run::{run_baseline_monolithic, run_hpsde, RunResult};
pub use trace::{
    aggregate, read_rows, write_aggregate, write_rows, AggregateRow, IterationRecord,
    LearningTrace, OptionStats, RunFailure, TraceRow,
};

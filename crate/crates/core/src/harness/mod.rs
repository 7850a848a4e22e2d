//! Configuration, experiment presets and report files.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{ExperimentConfig, SplitSizes};
pub use experiment::{run_experiment, run_variants, ExperimentResults, Variant};
pub use report::{report_correlation, CorrelationReport};

//! Experiment harness for noise-space search: JSON configs, sweep runner,
//! CSV reports, SVG scaling plots.
//!
//! The `noisesearch` binary wraps this library with `baseline`, `search`,
//! `sweep`, `plot`, and `summary` subcommands.

pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;
pub mod report;
pub mod summary;

pub use config::{ExperimentConfig, ModelDocument, Plan};
pub use error::{HarnessError, Result};
pub use experiment::{baseline_run, run_experiment, search_run, RunOptions, SweepReport};
pub use report::Record;

//! Experiment runner: JSON configs in, CSV traces and summaries out.

pub mod config;
pub mod error;
pub mod suite;

pub use config::{parse_config, Combination, ExperimentConfig};
pub use error::{CliError, Result};
pub use suite::{emit_timing, run_suite, SuiteReport};

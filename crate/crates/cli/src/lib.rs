//! Experiment driver behind the `nar` binary.

pub mod commands;
pub mod config;
pub mod error;
mod svg;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

//! Operational shell around `rscp-core`: experiment configuration, score
//! and label files, the repeated-split driver and reports. The `rscp`
//! binary exposes these as subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use experiment::run_experiment;
pub use report::Report;

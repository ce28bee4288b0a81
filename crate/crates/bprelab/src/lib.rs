//! Experiment harness for `bprelab-core`: TOML configs, suites, versioned
//! JSON reports with CSV and binary side files, and the `bprelab` CLI.

pub mod cli;
pub mod config;
pub mod error;
pub mod files;
pub mod parallel;
pub mod report;
pub mod suites;
pub mod verify;

pub use config::{load_config, parse_config, ExperimentConfig, Suite};
pub use error::HarnessError;
pub use report::Report;

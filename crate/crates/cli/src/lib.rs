//! Config-driven experiment runner for the `infosep` library.
//!
//! An experiment is a JSON document with a `version`, a global `seed`, an
//! `output_dir` and an ordered list of stages. Every file a run writes is
//! listed with its SHA-256 in `manifest.json`; a failing stage leaves an
//! `error.json` next to whatever it had already written.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod io;
pub mod runner;

use std::path::Path;

use serde_json::Value;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use runner::{execute, validate_prior, PriorValidation, RunOutcome};

/// Applies `key=value` overrides to a config document, parses it strictly and
/// runs it.
pub fn run_value(mut doc: Value, overrides: &[String]) -> Result<RunOutcome> {
    for o in overrides {
        config::apply_override(&mut doc, o)?;
    }
    let cfg = ExperimentConfig::from_value(doc)?;
    execute(&cfg)
}

pub fn run_file(path: &Path, overrides: &[String]) -> Result<RunOutcome> {
    run_value(runner::load_config(path)?, overrides)
}

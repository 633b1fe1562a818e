//! Config-driven experiment harness: dataset ingestion, shadow farm
//! training, attack runs, evaluation and comparison, each with a JSON
//! manifest that can be fed back in to reproduce the run.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;

pub use error::{CliError, Result};

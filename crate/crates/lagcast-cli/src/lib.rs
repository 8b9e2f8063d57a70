//! Command-line layer for the lagcast pipeline: flat key=value run
//! configuration, strict CSV table schemas, and the five subcommands
//! (`fit`, `forecast`, `evaluate`, `simulate`, `report`).

pub mod commands;
pub mod config;
pub mod error;
pub mod tables;

pub use config::{load_config, load_config_lenient, RunConfig};
pub use error::{CliError, CliResult};

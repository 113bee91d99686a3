//! Command-line front end: configuration, run directories and subcommands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod run;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use run::RunDir;

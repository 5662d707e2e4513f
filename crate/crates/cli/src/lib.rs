//! The `malle` command line: argument parsing, run configuration and the
//! five subcommands.

pub mod cli;
pub mod commands;
pub mod error;
pub mod run_config;

pub use cli::run;
pub use error::CliError;
pub use run_config::{BenchConfig, RunConfig};

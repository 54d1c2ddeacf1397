//! Library half of the `ssformer` command-line tool.

pub mod commands;
pub mod config;

pub use commands::CliError;
pub use config::RunConfig;

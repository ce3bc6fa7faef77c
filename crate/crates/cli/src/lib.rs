//! Command-line front end and HTTP service for `qcnet-core`.

pub mod commands;
pub mod service;

pub use commands::{run, Cli, CliError, Command};

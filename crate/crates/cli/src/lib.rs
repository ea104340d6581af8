//! Command implementations and the HTTP service behind the `topos` binary.

pub mod commands;
pub mod service;

pub use commands::{CliError, ExitCode};

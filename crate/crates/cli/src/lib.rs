//! Configuration, output and command plumbing behind the `robust-oco` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod validate;

/// Environment variable capping the worker threads used for replicates.
pub const MAX_THREADS_VAR: &str = "OCO_MAX_THREADS";

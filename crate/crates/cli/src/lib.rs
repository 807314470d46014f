//! Experiment runner: configuration, checkpoints and the `flest` subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod report;

pub use commands::CliError;
pub use config::ExperimentConfig;

//! Experiment runner: config files, run directories and the `ham` subcommands.

pub mod commands;
pub mod config;
pub mod presets;
pub mod run_dir;

pub use config::{ConfigError, ExperimentConfig};
pub use run_dir::RunDirectory;

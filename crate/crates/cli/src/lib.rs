//! Experiment runner, text formats and configuration for `gradmatch-core`.

pub mod config;
mod error;
pub mod formats;
pub mod runner;

pub use error::CliError;

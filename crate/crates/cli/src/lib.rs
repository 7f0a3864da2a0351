//! Command-line front end for the `qpkr` simulator: config files, presets,
//! sweeps and collapse tests with reproducible, self-describing outputs.

pub mod app;
pub mod commands;
pub mod config;
mod error;
pub mod output;

pub use error::CliError;

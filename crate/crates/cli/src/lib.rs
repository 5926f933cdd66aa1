//! Command-line front end: run configuration, model files, tradeoff CSVs
//! and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod modelfile;
pub mod report;

pub use config::RunConfig;
pub use modelfile::ModelFile;

//! Reproducible command-line runs over the core library: corpus
//! generation, training, decoding, evaluation, ablation sweeps and the
//! gradient check suite. Each command writes a manifest with content
//! digests next to its artifacts.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use error::{CliError, Result};

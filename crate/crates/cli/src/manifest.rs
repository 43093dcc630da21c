//! Run directories and the manifest written by every command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every resolved option, including defaults.
    pub config: Value,
    pub seed: u64,
    /// sha256 of each input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of each artifact written, keyed by path.
    pub artifacts: BTreeMap<String, String>,
    pub started: String,
    pub finished: String,
    pub version: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((p.display().to_string(), sha256_file(p)?))).collect()
}

/// `runs/<UTC timestamp>-seed<seed>` unless an explicit directory is given.
pub fn run_dir(out: Option<&Path>, seed: u64, now: DateTime<Utc>) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from("runs").join(format!("{}-seed{seed}", now.format("%Y%m%dT%H%M%S%3fZ"))),
    }
}

/// Creates `dir` and fails if any of `files` already exists there, unless
/// `force` is set.
pub fn prepare_dir(dir: &Path, files: &[&str], force: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if !force {
        for f in files.iter().chain(&[MANIFEST_FILE]) {
            let p = dir.join(f);
            if p.exists() {
                return Err(CliError::Refused(p.display().to_string()));
            }
        }
    }
    Ok(())
}

/// Collects what a command read and wrote, then writes the manifest.
pub struct ManifestBuilder {
    command: String,
    config: Value,
    seed: u64,
    started: DateTime<Utc>,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &impl Serialize, seed: u64, started: DateTime<Utc>) -> Result<Self> {
        Ok(Self { command: command.into(), config: serde_json::to_value(config)?, seed, started, inputs: Vec::new(), artifacts: Vec::new() })
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn artifact(&mut self, p: impl Into<PathBuf>) {
        self.artifacts.push(p.into());
    }

    pub fn write(self, dir: &Path) -> Result<RunManifest> {
        let m = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            inputs: digests(&self.inputs)?,
            artifacts: digests(&self.artifacts)?,
            started: self.started.to_rfc3339(),
            finished: Utc::now().to_rfc3339(),
            version: env!("CARGO_PKG_VERSION").into(),
        };
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(m)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

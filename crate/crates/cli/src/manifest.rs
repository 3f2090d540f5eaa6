//! Run manifests: everything needed to reproduce an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{CheckArgs, SimulateArgs, SolveArgs};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum RecordedCommand {
    Solve(SolveArgs),
    Simulate(SimulateArgs),
    Check(CheckArgs),
}

/// Mesh actually used by a solve.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolverRecord {
    /// `None` for the infinite horizon.
    pub horizon: Option<f64>,
    pub dt: f64,
    pub layers: usize,
    pub grid: usize,
    pub fix_tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: RecordedCommand,
    pub config: String,
    pub model_hash: String,
    pub solver: Option<SolverRecord>,
    pub seed: Option<u64>,
    pub out: String,
    /// Output file name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: RecordedCommand, config: &str, model_hash: String, out: &Path) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config: config.to_string(),
            model_hash,
            solver: None,
            seed: None,
            out: out.display().to_string(),
            outputs: BTreeMap::new(),
        }
    }

    /// Writes `name` into `dir` and records its hash.
    pub fn emit(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join(FILE_NAME), text + "\n").context("writing manifest")?;
        Ok(())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let path = if path.is_dir() { path.join(FILE_NAME) } else { path.to_path_buf() };
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

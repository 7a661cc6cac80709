use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub version: &'static str,
    /// Resolved configuration; usable as a `--config` file for the same
    /// subcommand.
    pub config: Value,
    pub seeds: Value,
    pub artifacts: Vec<Artifact>,
    pub results: Value,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &'static str, config: Value, seeds: Value) -> Self {
        Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            seeds,
            artifacts: Vec::new(),
            results: Value::Null,
        }
    }

    pub fn add(&mut self, path: &Path) -> anyhow::Result<()> {
        self.artifacts.push(Artifact { path: path.to_path_buf(), sha256: sha256_file(path)? });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// `<file>.manifest.json` next to a single-file output.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

//! Run manifests: what went in, what came out, and the settings used.
//! Contents are deterministic (no timestamps), so repeated runs with the
//! same inputs produce identical manifests.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub settings: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub struct Recorder {
    command: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            inputs: vec![],
            outputs: vec![],
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes the manifest to `path`, hashing every recorded file.
    pub fn write(self, path: &Path, settings: impl Serialize) -> Result<()> {
        let hash_all = |v: &[PathBuf]| v.iter().map(|p| digest(p)).collect::<Result<Vec<_>>>();
        let m = Manifest {
            tool: "choice",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            settings: serde_json::to_value(settings)?,
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
        };
        std::fs::write(path, serde_json::to_string_pretty(&m)? + "\n")
            .with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// `<file>.manifest.json` next to a primary output file.
pub fn beside(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

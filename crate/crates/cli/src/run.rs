//! Run directory layout and its artifact manifest (`run.json`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub command: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifacts: BTreeMap<String, Artifact>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.jsonl")
    }

    pub fn dataset_manifest(&self) -> PathBuf {
        self.root.join("dataset.json")
    }

    /// Compile task: held-out evaluation unitaries.
    pub fn test_set(&self) -> PathBuf {
        self.root.join("test_unitaries.jsonl")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn samples(&self) -> PathBuf {
        self.root.join("samples")
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        let p = self.root.join(MANIFEST);
        if !p.exists() {
            return Ok(RunManifest::default());
        }
        let text = fs::read_to_string(&p)?;
        serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    }

    /// Records (or replaces) an artifact with the current hash of its file.
    pub fn record(&self, name: &str, path: &Path, command: &str) -> Result<()> {
        let mut m = self.manifest()?;
        let rel = path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().replace('\\', "/");
        m.artifacts.insert(
            name.to_string(),
            Artifact { path: rel, sha256: sha256_file(path)?, command: command.to_string() },
        );
        fs::create_dir_all(&self.root)?;
        fs::write(self.root.join(MANIFEST), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }

    pub fn artifact_path(&self, name: &str) -> Result<Option<PathBuf>> {
        Ok(self.manifest()?.artifacts.get(name).map(|a| self.root.join(&a.path)))
    }

    /// Checkpoint manifest recorded by the last `train` run.
    pub fn latest_checkpoint(&self) -> Result<PathBuf> {
        self.artifact_path("checkpoint")?.ok_or_else(|| {
            CliError::Io(format!("no checkpoint recorded in {}; run `train` or pass --checkpoint", self.root.display()))
        })
    }
}

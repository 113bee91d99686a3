//! Weights as safetensors next to a JSON manifest describing how to rebuild
//! the model and interpret its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uditqc_core::codec::{EmbeddingTable, GateVocabulary};
use uditqc_core::dataset::Task;

use crate::error::{invalid, Result};
use crate::model::{CircuitDenoiser, ModelConfig};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub version: u32,
    pub task: Task,
    pub model: ModelConfig,
    pub vocab: GateVocabulary,
    pub embedding_seed: u64,
    /// Cosine schedule length.
    pub timesteps: usize,
    /// Seed the parameters were initialized from.
    pub param_seed: u64,
    pub epoch: usize,
    pub step: usize,
    /// Class id -> display name (SRV vector or gate subset).
    pub class_names: Vec<String>,
    /// Weights file, relative to the manifest.
    pub weights: String,
    pub weights_sha256: String,
}

impl CheckpointManifest {
    pub fn embedding_table(&self) -> EmbeddingTable {
        EmbeddingTable::build(&self.vocab, self.embedding_seed)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(invalid(format!("unsupported checkpoint version {}", self.version)));
        }
        self.model.validate()?;
        if self.vocab.dim() != self.model.udit.token_dim {
            return Err(invalid(format!(
                "vocabulary dimension {} != model token_dim {}",
                self.vocab.dim(),
                self.model.udit.token_dim
            )));
        }
        if self.class_names.len() != self.model.conditioning.num_classes {
            return Err(invalid(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.model.conditioning.num_classes
            )));
        }
        if self.timesteps != self.model.conditioning.timesteps {
            return Err(invalid("manifest timesteps disagree with conditioning.timesteps"));
        }
        Ok(())
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Writes `<stem>.safetensors` and `<stem>.json` into `dir`; returns the
/// manifest path. `manifest.weights` and its hash are filled in here.
pub fn save_checkpoint(dir: &Path, stem: &str, model: &CircuitDenoiser, manifest: &CheckpointManifest) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let weights = format!("{stem}.safetensors");
    let wpath = dir.join(&weights);
    model.store().save(&wpath)?;
    let mut m = manifest.clone();
    m.weights = weights;
    m.weights_sha256 = sha256_file(&wpath)?;
    let mpath = dir.join(format!("{stem}.json"));
    fs::write(&mpath, serde_json::to_string_pretty(&m)?)?;
    Ok(mpath)
}

pub fn read_manifest(path: &Path) -> Result<CheckpointManifest> {
    let m: CheckpointManifest = serde_json::from_slice(&fs::read(path)?)?;
    m.validate()?;
    Ok(m)
}

/// Rebuilds the model described by a manifest and loads its weights. The
/// model is inference-only (see [`CircuitDenoiser::for_inference`]).
pub fn load_checkpoint(path: &Path, dtype: DType) -> Result<(CircuitDenoiser, CheckpointManifest)> {
    let m = read_manifest(path)?;
    let wpath = path.parent().unwrap_or(Path::new(".")).join(&m.weights);
    let hash = sha256_file(&wpath)?;
    if hash != m.weights_sha256 {
        return Err(invalid(format!("weights file {} does not match its manifest hash", wpath.display())));
    }
    let model = CircuitDenoiser::for_inference(&m.model, m.param_seed, dtype)?;
    let loaded = model.store().load(&wpath)?;
    if loaded != model.store().names().len() {
        return Err(invalid(format!(
            "checkpoint holds {loaded} tensors, model has {}",
            model.store().names().len()
        )));
    }
    Ok((model, m))
}

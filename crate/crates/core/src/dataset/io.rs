use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::generate::GenerationOutcome;
use super::spec::{CircuitRecord, DatasetSpec};
use crate::codec::GateVocabulary;
use crate::error::{Error, Result};

/// Writes one JSON record per line and returns the SHA-256 of the bytes written.
pub fn write_dataset(path: impl AsRef<Path>, records: &[CircuitRecord]) -> Result<String> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut hasher = Sha256::new();
    for r in records {
        let mut line = serde_json::to_vec(r)?;
        line.push(b'\n');
        hasher.update(&line);
        out.write_all(&line)?;
    }
    out.flush()?;
    Ok(hex::encode(hasher.finalize()))
}

/// Reads a JSONL dataset; malformed lines fail with their 1-based line number.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<CircuitRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        records.push(rec);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub vocab: GateVocabulary,
    /// Class names in label order: SRVs like `[1,2,2]` or gate subsets like `h,cx`.
    pub classes: Vec<String>,
    pub per_class_counts: Vec<usize>,
    pub records: usize,
    pub attempts: u64,
    pub complete: bool,
    /// Compile task: number of distinct unitaries among the records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distinct_unitaries: Option<usize>,
    pub content_hash: String,
}

impl DatasetManifest {
    pub fn new(spec: &DatasetSpec, outcome: &GenerationOutcome, content_hash: String) -> Result<Self> {
        let distinct_unitaries = if outcome.records.iter().any(|r| r.unitary.is_some()) {
            let mut keys: Vec<String> = outcome
                .records
                .iter()
                .filter_map(|r| r.unitary.as_ref())
                .map(|u| serde_json::to_string(u))
                .collect::<std::result::Result<_, _>>()?;
            keys.sort();
            keys.dedup();
            Some(keys.len())
        } else {
            None
        };
        Ok(Self {
            spec: spec.clone(),
            seed: spec.seed,
            vocab: GateVocabulary::new(spec.gate_pool.clone())?,
            classes: outcome.class_names.clone(),
            per_class_counts: outcome.per_class_counts.clone(),
            records: outcome.records.len(),
            attempts: outcome.attempts,
            complete: outcome.complete,
            distinct_unitaries,
            content_hash,
        })
    }
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, manifest)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

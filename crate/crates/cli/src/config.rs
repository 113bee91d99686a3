//! Run configuration: one JSON document describing dataset, model, training,
//! sampling and evaluation for a single run directory.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};
use uditqc_core::codec::GateVocabulary;
use uditqc_core::dataset::{enumerate_gate_subsets, DatasetSpec, Task};
use uditqc_core::enumerate_srvs;
use uditqc_model::{ModelConfig, NoiseSchedule, SamplerConfig, TrainConfig};

use crate::error::{config, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditConfig {
    /// Random prefixes tried per (input SRV, target SRV) cell.
    #[serde(default = "default_prefixes")]
    pub prefixes_per_cell: usize,
    pub min_gates: usize,
    pub max_gates: usize,
    #[serde(default = "default_prefix_attempts")]
    pub max_attempts: usize,
}

fn default_prefixes() -> usize {
    20
}
fn default_prefix_attempts() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_eval_batch")]
    pub batch_size: usize,
    /// Exact-compilation threshold on the Frobenius distance.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Compile task: unitaries held out of training for evaluation.
    #[serde(default)]
    pub test_unitaries: usize,
    #[serde(default)]
    pub edit: Option<EditConfig>,
}

fn default_samples() -> usize {
    1024
}
fn default_eval_batch() -> usize {
    128
}
fn default_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Every artifact of the run lives under this directory.
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    /// Seeds parameter initialization, sampling and evaluation.
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub embedding_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
    #[serde(default)]
    pub precision: Precision,
}

impl RunConfig {
    /// Parses JSON, reporting the path of the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config(format!("config.{path}: {}", e.inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg = Self::from_json(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn vocabulary(&self) -> Result<GateVocabulary> {
        GateVocabulary::new(self.dataset.gate_pool.clone()).map_err(|e| config(format!("config.dataset.gate_pool: {e}")))
    }

    pub fn num_classes(&self) -> usize {
        match self.task {
            Task::Srv => enumerate_srvs(self.dataset.qubits).len(),
            Task::Compile => enumerate_gate_subsets(&self.dataset.gate_pool).len(),
        }
    }

    pub fn canvas(&self) -> (usize, usize) {
        (self.model.udit.qubits, self.model.udit.max_gates)
    }

    pub fn dtype(&self) -> DType {
        self.precision.dtype()
    }

    /// Cross-field consistency; every problem is reported with its field path.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, path: &str, msg: String| {
            if !ok {
                problems.push(format!("config.{path}: {msg}"));
            }
        };
        let d = &self.dataset;
        let u = &self.model.udit;
        let c = &self.model.conditioning;
        check(d.task == self.task, "dataset.task", format!("{:?} disagrees with task {:?}", d.task, self.task));
        if let Err(e) = d.validate() {
            check(false, "dataset", e.to_string());
        }
        if let Err(e) = u.validate() {
            check(false, "model.udit", e.to_string());
        }
        if let Err(e) = c.validate() {
            check(false, "model.conditioning", e.to_string());
        }
        check(u.qubits >= d.qubits, "model.udit.qubits", format!("{} rows cannot hold {} qubits", u.qubits, d.qubits));
        check(
            u.max_gates >= d.max_gates,
            "model.udit.max_gates",
            format!("{} columns cannot hold circuits of up to {} gates", u.max_gates, d.max_gates),
        );
        if let Ok(v) = GateVocabulary::new(d.gate_pool.clone()) {
            check(
                u.token_dim == v.dim(),
                "model.udit.token_dim",
                format!("must be {} for a pool of {} gates, got {}", v.dim(), v.num_gates(), u.token_dim),
            );
        }
        if d.validate().is_ok() {
            let n = self.num_classes();
            check(c.num_classes == n, "model.conditioning.num_classes", format!("must be {n}, got {}", c.num_classes));
        }
        match (self.task, &c.unitary) {
            (Task::Compile, None) => check(false, "model.conditioning.unitary", "required for the compile task".into()),
            (Task::Srv, Some(_)) => check(false, "model.conditioning.unitary", "only used by the compile task".into()),
            (Task::Compile, Some(enc)) => check(
                enc.qubits == d.qubits,
                "model.conditioning.unitary.qubits",
                format!("must equal dataset.qubits = {}, got {}", d.qubits, enc.qubits),
            ),
            _ => {}
        }
        check(
            self.train.timesteps == c.timesteps,
            "train.timesteps",
            format!("{} disagrees with model.conditioning.timesteps = {}", self.train.timesteps, c.timesteps),
        );
        if let Err(e) = self.train.validate() {
            check(false, "train", e.to_string());
        }
        match NoiseSchedule::cosine(c.timesteps) {
            Ok(s) => {
                if let Err(e) = self.sampler.validate(&s) {
                    check(false, "sampler", e.to_string());
                }
            }
            Err(e) => check(false, "model.conditioning.timesteps", e.to_string()),
        }
        check(self.eval.samples > 0, "eval.samples", "must be positive".into());
        check(self.eval.batch_size > 0, "eval.batch_size", "must be positive".into());
        check(self.eval.tolerance > 0.0, "eval.tolerance", "must be positive".into());
        if self.task == Task::Srv {
            check(self.eval.test_unitaries == 0, "eval.test_unitaries", "only used by the compile task".into());
        }
        if let Some(e) = &self.eval.edit {
            check(e.min_gates <= e.max_gates, "eval.edit.min_gates", "exceeds eval.edit.max_gates".into());
            check(e.max_gates < u.max_gates, "eval.edit.max_gates", "prefixes must leave a free column".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(config(problems.join("\n")))
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::circuit::Circuit;
use crate::error::{Error, Result};
use crate::gate::GateKind;
use crate::sim::UnitaryMatrix;
use crate::srv::Srv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Srv,
    Compile,
}

fn default_attempt_factor() -> usize {
    200
}

fn default_stall_limit() -> usize {
    5_000
}

fn default_chunk_size() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub task: Task,
    pub gate_pool: Vec<GateKind>,
    pub qubits: usize,
    pub min_gates: usize,
    pub max_gates: usize,
    /// Records per class after balancing (a cap for the compile task).
    pub balanced_size: usize,
    pub seed: u64,
    /// Sampling budget, as a multiple of the target record count.
    #[serde(default = "default_attempt_factor")]
    pub attempt_factor: usize,
    /// Compile task: a subset stops after this many consecutive samples
    /// without a new distinct circuit.
    #[serde(default = "default_stall_limit")]
    pub stall_limit: usize,
    /// Samples drawn per RNG stream.
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
}

impl DatasetSpec {
    /// Entanglement-generation rows of the reference dataset table.
    pub fn srv_reference(qubits: usize, seed: u64) -> Option<Self> {
        let (min_gates, max_gates, balanced_size) = match qubits {
            3 => (2, 16, 40_000),
            4 => (3, 20, 25_000),
            5 => (4, 28, 17_000),
            6 => (5, 40, 8_100),
            7 => (6, 52, 4_000),
            8 => (7, 52, 2_100),
            _ => return None,
        };
        Some(Self::new(Task::Srv, GateKind::ENTANGLEMENT_POOL.to_vec(), qubits, min_gates, max_gates, balanced_size, seed))
    }

    /// Unitary-compilation row of the reference dataset table.
    pub fn compile_reference(seed: u64) -> Self {
        Self::new(Task::Compile, GateKind::COMPILE_POOL.to_vec(), 3, 2, 12, 20_000, seed)
    }

    /// Workstation-sized SRV preset (3 qubits, 5 x 10,000 records).
    pub fn srv_desk(seed: u64) -> Self {
        Self { balanced_size: 10_000, ..Self::srv_reference(3, seed).unwrap() }
    }

    pub fn new(
        task: Task,
        gate_pool: Vec<GateKind>,
        qubits: usize,
        min_gates: usize,
        max_gates: usize,
        balanced_size: usize,
        seed: u64,
    ) -> Self {
        Self {
            task,
            gate_pool,
            qubits,
            min_gates,
            max_gates,
            balanced_size,
            seed,
            attempt_factor: default_attempt_factor(),
            stall_limit: default_stall_limit(),
            chunk_size: default_chunk_size(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(m));
        if self.qubits == 0 {
            return fail("qubits must be >= 1".into());
        }
        if self.min_gates > self.max_gates {
            return fail(format!("min_gates {} > max_gates {}", self.min_gates, self.max_gates));
        }
        if self.balanced_size == 0 {
            return fail("balanced_size must be >= 1".into());
        }
        if self.gate_pool.is_empty() {
            return fail("gate_pool is empty".into());
        }
        if self.gate_pool.len() > 16 {
            return fail("gate_pool larger than 16 kinds".into());
        }
        if let Some(k) = self.gate_pool.iter().find(|k| k.arity() > self.qubits) {
            return fail(format!("gate {k} needs {} qubits, only {} available", k.arity(), self.qubits));
        }
        if self.chunk_size == 0 {
            return fail("chunk_size must be >= 1".into());
        }
        Ok(())
    }
}

/// One dataset line. `srv` is set for the SRV task, `unitary` for compile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitRecord {
    pub circuit: Circuit,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub srv: Option<Srv>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unitary: Option<UnitaryMatrix>,
}

impl CircuitRecord {
    pub fn canonical_key(&self) -> String {
        self.circuit.canonical_key()
    }
}

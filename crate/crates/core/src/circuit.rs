use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::gate::{Gate, GateKind};

/// Ordered gate list over `num_qubits` qubits; gate order is time order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCircuit")]
pub struct Circuit {
    #[serde(rename = "qubits")]
    num_qubits: usize,
    gates: Vec<Gate>,
}

#[derive(Deserialize)]
struct RawCircuit {
    qubits: usize,
    gates: Vec<Gate>,
}

impl TryFrom<RawCircuit> for Circuit {
    type Error = Error;

    fn try_from(raw: RawCircuit) -> Result<Self> {
        Circuit::new(raw.qubits, raw.gates)
    }
}

impl Circuit {
    pub fn new(num_qubits: usize, gates: Vec<Gate>) -> Result<Self> {
        if num_qubits == 0 {
            return Err(validation("circuit needs at least one qubit"));
        }
        if let Some(g) = gates.iter().find(|g| g.max_qubit() >= num_qubits) {
            return Err(validation(format!(
                "gate {g} out of range for {num_qubits} qubits"
            )));
        }
        Ok(Self { num_qubits, gates })
    }

    pub fn empty(num_qubits: usize) -> Self {
        assert!(num_qubits >= 1, "circuit needs at least one qubit");
        Self { num_qubits, gates: Vec::new() }
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn push(&mut self, gate: Gate) -> Result<()> {
        if gate.max_qubit() >= self.num_qubits {
            return Err(validation(format!("gate {gate} out of range for {} qubits", self.num_qubits)));
        }
        self.gates.push(gate);
        Ok(())
    }

    pub fn into_gates(self) -> Vec<Gate> {
        self.gates
    }

    /// Same gates on a register of `num_qubits` qubits (must not drop a used qubit).
    pub fn with_num_qubits(&self, num_qubits: usize) -> Result<Self> {
        Circuit::new(num_qubits, self.gates.clone())
    }

    /// Qubits touched by at least one gate.
    pub fn used_qubits(&self) -> Vec<usize> {
        let mut used = vec![false; self.num_qubits];
        for g in &self.gates {
            for &q in g.qubits() {
                used[q] = true;
            }
        }
        (0..self.num_qubits).filter(|&q| used[q]).collect()
    }

    pub fn uses_only(&self, kinds: &[GateKind]) -> bool {
        self.gates.iter().all(|g| kinds.contains(&g.kind()))
    }

    /// Structural dedup key: the compact circuit JSON, gate order preserved.
    pub fn canonical_key(&self) -> String {
        serde_json::to_string(self).expect("circuit serializes")
    }

    /// ASCII diagram, one row per qubit and one column per time step.
    ///
    /// Targets show the gate name (`H`, `X`, `Z`, `+` for a controlled
    /// target, `x` for swap ends), controls show `*`, and `|` marks qubits
    /// that a multi-qubit gate spans without acting on.
    pub fn diagram(&self) -> String {
        const W: usize = 3;
        let mut rows: Vec<String> = (0..self.num_qubits).map(|q| format!("q{q:<2}: ")).collect();
        for g in &self.gates {
            let lo = *g.qubits().iter().min().unwrap();
            let hi = *g.qubits().iter().max().unwrap();
            for (q, row) in rows.iter_mut().enumerate() {
                let sym = if g.controls().contains(&q) {
                    "*".to_string()
                } else if g.targets().contains(&q) {
                    match g.kind() {
                        GateKind::H => "H".into(),
                        GateKind::X => "X".into(),
                        GateKind::Z => "Z".into(),
                        GateKind::CX | GateKind::CCX => "+".into(),
                        GateKind::SWAP => "x".into(),
                    }
                } else if q > lo && q < hi {
                    "|".to_string()
                } else {
                    "-".to_string()
                };
                let _ = write!(row, "-{sym:-<w$}", w = W - 1);
            }
        }
        let mut out = String::new();
        for row in rows {
            out.push_str(&row);
            out.push_str("-\n");
        }
        out
    }
}

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Gate kinds available to the generators. Every kind is self-inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    H,
    X,
    Z,
    CX,
    SWAP,
    CCX,
}

impl GateKind {
    pub const ALL: [GateKind; 6] = [
        GateKind::H,
        GateKind::X,
        GateKind::Z,
        GateKind::CX,
        GateKind::SWAP,
        GateKind::CCX,
    ];

    /// Pool used by the entanglement-generation task.
    pub const ENTANGLEMENT_POOL: [GateKind; 2] = [GateKind::H, GateKind::CX];

    /// Pool used by the unitary-compilation task, in label order.
    pub const COMPILE_POOL: [GateKind; 6] = [
        GateKind::H,
        GateKind::CX,
        GateKind::Z,
        GateKind::X,
        GateKind::CCX,
        GateKind::SWAP,
    ];

    pub fn arity(self) -> usize {
        match self {
            GateKind::H | GateKind::X | GateKind::Z => 1,
            GateKind::CX | GateKind::SWAP => 2,
            GateKind::CCX => 3,
        }
    }

    pub fn control_count(self) -> usize {
        match self {
            GateKind::CX => 1,
            GateKind::CCX => 2,
            _ => 0,
        }
    }

    pub fn target_count(self) -> usize {
        self.arity() - self.control_count()
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::H => "h",
            GateKind::X => "x",
            GateKind::Z => "z",
            GateKind::CX => "cx",
            GateKind::SWAP => "swap",
            GateKind::CCX => "ccx",
        }
    }

    /// Dense matrix on the gate's local space, row-major, size `2^arity`.
    ///
    /// Local basis index bit `j` is the state of the `j`-th qubit in the
    /// gate's qubit list (controls first, then targets).
    pub fn local_matrix(self) -> Vec<Complex64> {
        let dim = 1usize << self.arity();
        let mut m = vec![Complex64::new(0.0, 0.0); dim * dim];
        match self {
            GateKind::H => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                m[0] = Complex64::new(s, 0.0);
                m[1] = Complex64::new(s, 0.0);
                m[2] = Complex64::new(s, 0.0);
                m[3] = Complex64::new(-s, 0.0);
            }
            GateKind::Z => {
                m[0] = Complex64::new(1.0, 0.0);
                m[3] = Complex64::new(-1.0, 0.0);
            }
            _ => {
                for col in 0..dim {
                    let row = self.permute_basis(col);
                    m[row * dim + col] = Complex64::new(1.0, 0.0);
                }
            }
        }
        m
    }

    // Image of a local basis state under a permutation gate.
    fn permute_basis(self, i: usize) -> usize {
        match self {
            GateKind::X => i ^ 1,
            GateKind::CX => {
                if i & 1 == 1 {
                    i ^ 0b10
                } else {
                    i
                }
            }
            GateKind::CCX => {
                if i & 0b11 == 0b11 {
                    i ^ 0b100
                } else {
                    i
                }
            }
            GateKind::SWAP => ((i & 1) << 1) | ((i >> 1) & 1),
            GateKind::H | GateKind::Z => i,
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GateKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| validation(format!("unknown gate kind `{s}`")))
    }
}

/// A gate applied to concrete qubits.
///
/// Qubits are stored controls first, then targets, each group in ascending
/// order, so equal physical gates compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGate")]
pub struct Gate {
    kind: GateKind,
    qubits: Vec<usize>,
}

#[derive(Deserialize)]
struct RawGate {
    kind: GateKind,
    qubits: Vec<usize>,
}

impl TryFrom<RawGate> for Gate {
    type Error = Error;

    fn try_from(raw: RawGate) -> Result<Self> {
        Gate::new(raw.kind, raw.qubits)
    }
}

impl Gate {
    /// Builds a gate from `qubits` given controls first. Orders within the
    /// control and target groups are normalized.
    pub fn new(kind: GateKind, mut qubits: Vec<usize>) -> Result<Self> {
        if qubits.len() != kind.arity() {
            return Err(validation(format!(
                "gate {kind} expects {} qubits, got {}",
                kind.arity(),
                qubits.len()
            )));
        }
        for i in 0..qubits.len() {
            if qubits[i + 1..].contains(&qubits[i]) {
                return Err(validation(format!("gate {kind} repeats qubit {}", qubits[i])));
            }
        }
        let nc = kind.control_count();
        qubits[..nc].sort_unstable();
        qubits[nc..].sort_unstable();
        Ok(Self { kind, qubits })
    }

    pub fn h(q: usize) -> Self {
        Self { kind: GateKind::H, qubits: vec![q] }
    }

    pub fn x(q: usize) -> Self {
        Self { kind: GateKind::X, qubits: vec![q] }
    }

    pub fn z(q: usize) -> Self {
        Self { kind: GateKind::Z, qubits: vec![q] }
    }

    pub fn cx(control: usize, target: usize) -> Self {
        Self::new(GateKind::CX, vec![control, target]).expect("distinct qubits")
    }

    pub fn swap(a: usize, b: usize) -> Self {
        Self::new(GateKind::SWAP, vec![a, b]).expect("distinct qubits")
    }

    pub fn ccx(c0: usize, c1: usize, target: usize) -> Self {
        Self::new(GateKind::CCX, vec![c0, c1, target]).expect("distinct qubits")
    }

    pub fn kind(&self) -> GateKind {
        self.kind
    }

    pub fn qubits(&self) -> &[usize] {
        &self.qubits
    }

    pub fn controls(&self) -> &[usize] {
        &self.qubits[..self.kind.control_count()]
    }

    pub fn targets(&self) -> &[usize] {
        &self.qubits[self.kind.control_count()..]
    }

    pub fn touches(&self, q: usize) -> bool {
        self.qubits.contains(&q)
    }

    pub fn overlaps(&self, other: &Gate) -> bool {
        self.qubits.iter().any(|&q| other.touches(q))
    }

    pub fn max_qubit(&self) -> usize {
        self.qubits.iter().copied().max().unwrap_or(0)
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.kind)?;
        for (i, q) in self.qubits.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{q}")?;
        }
        f.write_str(")")
    }
}

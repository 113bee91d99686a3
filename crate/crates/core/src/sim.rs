use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuit::Circuit;
use crate::error::{validation, Result};
use crate::gate::Gate;

pub const MAX_SIM_QUBITS: usize = 12;
pub const MAX_UNITARY_QUBITS: usize = 10;
const NORM_TOL: f64 = 1e-9;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Pure state of `q` qubits; qubit 0 is the least significant index bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl Statevector {
    pub fn zero_state(num_qubits: usize) -> Self {
        let mut amplitudes = vec![ZERO; 1 << num_qubits];
        amplitudes[0] = ONE;
        Self { num_qubits, amplitudes }
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let n = amplitudes.len();
        if n < 2 || !n.is_power_of_two() {
            return Err(validation(format!("statevector length {n} is not a power of two")));
        }
        Ok(Self { num_qubits: n.trailing_zeros() as usize, amplitudes })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORM_TOL
    }

    pub fn apply(&mut self, gate: &Gate) {
        apply_local(&mut self.amplitudes, gate);
    }
}

/// Dense `2^q x 2^q` complex matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<[f64; 2]>>", into = "Vec<Vec<[f64; 2]>>")]
pub struct UnitaryMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl UnitaryMatrix {
    pub fn identity(num_qubits: usize) -> Self {
        let dim = 1 << num_qubits;
        let mut entries = vec![ZERO; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = ONE;
        }
        Self { dim, entries }
    }

    pub fn from_rows(rows: Vec<Vec<Complex64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(validation("unitary must be a non-empty square matrix"));
        }
        Ok(Self { dim, entries: rows.into_iter().flatten().collect() })
    }

    pub fn from_row_major(dim: usize, entries: Vec<Complex64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(validation(format!("expected {} entries for dim {dim}", dim * dim)));
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_qubits(&self) -> usize {
        self.dim.trailing_zeros() as usize
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim;
        let mut entries = vec![ZERO; n * n];
        for i in 0..n {
            for j in 0..n {
                entries[j * n + i] = self.entries[i * n + j].conj();
            }
        }
        Self { dim: n, entries }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(validation(format!("dimension mismatch {} vs {}", self.dim, other.dim)));
        }
        let n = self.dim;
        let mut entries = vec![ZERO; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    entries[i * n + j] += a * other.entries[k * n + j];
                }
            }
        }
        Ok(Self { dim: n, entries })
    }

    pub fn apply_to(&self, state: &Statevector) -> Result<Statevector> {
        let n = self.dim;
        if state.amplitudes.len() != n {
            return Err(validation("state and unitary dimensions differ"));
        }
        let amplitudes = (0..n)
            .map(|i| (0..n).map(|j| self.entries[i * n + j] * state.amplitudes[j]).sum())
            .collect();
        Ok(Statevector { num_qubits: state.num_qubits, amplitudes })
    }

    /// Frobenius norm of `U U^† - I`.
    pub fn unitarity_error(&self) -> f64 {
        let prod = self.matmul(&self.adjoint()).expect("same dim");
        let n = self.dim;
        let mut err = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { ONE } else { ZERO };
                err += (prod.entries[i * n + j] - target).norm_sqr();
            }
        }
        err.sqrt()
    }

    pub fn is_unitary(&self) -> bool {
        self.unitarity_error() <= NORM_TOL
    }

    /// Rows as `[re, im]` pairs, the on-disk layout.
    pub fn to_pairs(&self) -> Vec<Vec<[f64; 2]>> {
        self.entries
            .chunks(self.dim)
            .map(|row| row.iter().map(|c| [c.re, c.im]).collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<[f64; 2]>>> for UnitaryMatrix {
    type Error = crate::error::Error;

    fn try_from(rows: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        UnitaryMatrix::from_rows(
            rows.into_iter()
                .map(|r| r.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
                .collect(),
        )
    }
}

impl From<UnitaryMatrix> for Vec<Vec<[f64; 2]>> {
    fn from(u: UnitaryMatrix) -> Self {
        u.to_pairs()
    }
}

// Applies the gate's local matrix in place on a 2^q amplitude buffer.
fn apply_local(amps: &mut [Complex64], gate: &Gate) {
    let qubits = gate.qubits();
    let m = gate.kind().local_matrix();
    let local_dim = 1usize << qubits.len();
    let mask: usize = qubits.iter().map(|&q| 1usize << q).sum();
    let mut idx = vec![0usize; local_dim];
    let mut buf = vec![ZERO; local_dim];
    for base in 0..amps.len() {
        if base & mask != 0 {
            continue;
        }
        for (local, slot) in idx.iter_mut().enumerate() {
            let mut i = base;
            for (j, &q) in qubits.iter().enumerate() {
                if local >> j & 1 == 1 {
                    i |= 1 << q;
                }
            }
            *slot = i;
        }
        for (r, out) in buf.iter_mut().enumerate() {
            *out = (0..local_dim).map(|c| m[r * local_dim + c] * amps[idx[c]]).sum();
        }
        for (slot, v) in idx.iter().zip(&buf) {
            amps[*slot] = *v;
        }
    }
}

/// Applies the circuit to `|0...0>`.
pub fn simulate(circuit: &Circuit) -> Result<Statevector> {
    let q = circuit.num_qubits();
    if q > MAX_SIM_QUBITS {
        return Err(validation(format!("{q} qubits exceeds the simulation bound {MAX_SIM_QUBITS}")));
    }
    let mut state = Statevector::zero_state(q);
    for g in circuit.gates() {
        state.apply(g);
    }
    Ok(state)
}

/// Product of the gate matrices in application order (last gate leftmost).
pub fn circuit_unitary(circuit: &Circuit) -> Result<UnitaryMatrix> {
    let q = circuit.num_qubits();
    if q > MAX_UNITARY_QUBITS {
        return Err(validation(format!("{q} qubits exceeds the unitary bound {MAX_UNITARY_QUBITS}")));
    }
    let dim = 1usize << q;
    // Column j is the circuit applied to basis state |j>.
    let mut entries = vec![ZERO; dim * dim];
    let mut column = vec![ZERO; dim];
    for j in 0..dim {
        column.iter_mut().for_each(|a| *a = ZERO);
        column[j] = ONE;
        for g in circuit.gates() {
            apply_local(&mut column, g);
        }
        for i in 0..dim {
            entries[i * dim + j] = column[i];
        }
    }
    Ok(UnitaryMatrix { dim, entries })
}

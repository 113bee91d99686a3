use std::fmt;

use serde::{Deserialize, Serialize};

use super::GateVocabulary;
use crate::circuit::Circuit;
use crate::error::{validation, Error, Result};
use crate::gate::Gate;

/// `Q x T` integer grid: sign marks the node role (negative = control),
/// magnitude is the token id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i32>,
}

impl TokenMatrix {
    pub fn filled(rows: usize, cols: usize, value: i32) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<i32>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
            return Err(validation("token matrix rows must be non-empty and equal length"));
        }
        Ok(Self { rows: r, cols: c, data: rows.into_iter().flatten().collect() })
    }

    /// Number of qubit rows `Q`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of time-step columns `T`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, q: usize, t: usize) -> i32 {
        self.data[q * self.cols + t]
    }

    pub fn set(&mut self, q: usize, t: usize, value: i32) {
        self.data[q * self.cols + t] = value;
    }

    pub fn column(&self, t: usize) -> Vec<i32> {
        (0..self.rows).map(|q| self.get(q, t)).collect()
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.data
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<i32>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }
}

impl fmt::Display for TokenMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.rows {
            for t in 0..self.cols {
                write!(f, "{:>3}", self.get(q, t))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Places gate `t` in column `t` of a `q_cap x t_cap` canvas.
pub fn tokenize(circuit: &Circuit, vocab: &GateVocabulary, q_cap: usize, t_cap: usize) -> Result<TokenMatrix> {
    if circuit.num_qubits() > q_cap || circuit.len() > t_cap {
        return Err(Error::Capacity(format!(
            "circuit with {} qubits and {} gates does not fit a {q_cap} x {t_cap} canvas",
            circuit.num_qubits(),
            circuit.len()
        )));
    }
    let pad = vocab.padding();
    let mut m = TokenMatrix::filled(q_cap, t_cap, pad);
    for (t, gate) in circuit.gates().iter().enumerate() {
        let id = vocab
            .id(gate.kind())
            .ok_or_else(|| validation(format!("gate kind {} not in vocabulary", gate.kind())))?;
        for q in 0..circuit.num_qubits() {
            m.set(q, t, vocab.background());
        }
        for &c in gate.controls() {
            m.set(c, t, -id);
        }
        for &x in gate.targets() {
            m.set(x, t, id);
        }
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorReason {
    MixedIdsInColumn,
    WrongNodePattern,
    PaddingMixedWithGate,
    GateAfterTermination,
    RowPaddingInconsistent,
}

impl ErrorReason {
    pub const ALL: [ErrorReason; 5] = [
        ErrorReason::MixedIdsInColumn,
        ErrorReason::WrongNodePattern,
        ErrorReason::PaddingMixedWithGate,
        ErrorReason::GateAfterTermination,
        ErrorReason::RowPaddingInconsistent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorReason::MixedIdsInColumn => "mixed-ids-in-column",
            ErrorReason::WrongNodePattern => "wrong-node-pattern",
            ErrorReason::PaddingMixedWithGate => "padding-mixed-with-gate",
            ErrorReason::GateAfterTermination => "gate-after-termination",
            ErrorReason::RowPaddingInconsistent => "row-padding-inconsistent",
        }
    }
}

impl fmt::Display for ErrorReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A token matrix that does not describe a valid circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCircuit {
    pub reason: ErrorReason,
    pub column: usize,
}

impl fmt::Display for ErrorCircuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at column {}", self.reason, self.column)
    }
}

impl std::error::Error for ErrorCircuit {}

/// Reads columns left to right until the first all-padding column.
///
/// Rows that are padding in the first column are treated as unused qubits
/// and must stay padding in every active column. Every active column holds
/// exactly one gate. The register size is `Q` minus trailing unused rows;
/// an all-padding matrix decodes to the empty circuit on `Q` qubits.
pub fn detokenize(tokens: &TokenMatrix, vocab: &GateVocabulary) -> std::result::Result<Circuit, ErrorCircuit> {
    let pad = vocab.padding();
    let all_padding = |t: usize| (0..tokens.rows()).all(|q| tokens.get(q, t) == pad);
    let active = (0..tokens.cols()).find(|&t| all_padding(t)).unwrap_or(tokens.cols());
    if let Some(t) = (active..tokens.cols()).find(|&t| !all_padding(t)) {
        return Err(ErrorCircuit { reason: ErrorReason::GateAfterTermination, column: t });
    }
    if active == 0 {
        return Ok(Circuit::empty(tokens.rows()));
    }

    let padded_row: Vec<bool> = (0..tokens.rows()).map(|q| tokens.get(q, 0) == pad).collect();
    let mut gates = Vec::with_capacity(active);
    for t in 0..active {
        let err = |reason| ErrorCircuit { reason, column: t };
        let mut controls = Vec::new();
        let mut targets = Vec::new();
        let mut magnitude = None;
        for q in 0..tokens.rows() {
            let cell = tokens.get(q, t);
            if padded_row[q] {
                if cell != pad {
                    return Err(err(ErrorReason::RowPaddingInconsistent));
                }
                continue;
            }
            if cell == pad {
                return Err(err(ErrorReason::PaddingMixedWithGate));
            }
            if cell == 0 {
                continue;
            }
            let m = cell.abs();
            if m >= pad {
                return Err(err(ErrorReason::WrongNodePattern));
            }
            match magnitude {
                None => magnitude = Some(m),
                Some(prev) if prev != m => return Err(err(ErrorReason::MixedIdsInColumn)),
                _ => {}
            }
            if cell < 0 {
                controls.push(q);
            } else {
                targets.push(q);
            }
        }
        let Some(m) = magnitude else {
            return Err(err(ErrorReason::WrongNodePattern));
        };
        let kind = vocab.kind(m).expect("magnitude below padding is a gate id");
        if controls.len() != kind.control_count() || targets.len() != kind.target_count() {
            return Err(err(ErrorReason::WrongNodePattern));
        }
        controls.extend(targets);
        gates.push(Gate::new(kind, controls).map_err(|_| err(ErrorReason::WrongNodePattern))?);
    }
    let trailing = padded_row.iter().rev().take_while(|&&p| p).count();
    let num_qubits = tokens.rows() - trailing;
    Ok(Circuit::new(num_qubits, gates).expect("gates only use non-padded rows"))
}

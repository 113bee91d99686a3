use serde::{Deserialize, Serialize};

use super::embedding::dot;
use super::{EmbeddingTable, TokenMatrix};
use crate::error::{validation, Result};

/// `Q x T x d` real grid, cell-major: value `(q, t, k)` lives at
/// `(q * T + t) * d + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitTensor {
    rows: usize,
    cols: usize,
    dim: usize,
    values: Vec<f64>,
}

impl CircuitTensor {
    pub fn zeros(rows: usize, cols: usize, dim: usize) -> Self {
        Self { rows, cols, dim, values: vec![0.0; rows * cols * dim] }
    }

    pub fn from_values(rows: usize, cols: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols * dim {
            return Err(validation(format!(
                "expected {} values for shape ({rows}, {cols}, {dim}), got {}",
                rows * cols * dim,
                values.len()
            )));
        }
        Ok(Self { rows, cols, dim, values })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.dim)
    }

    pub fn cell(&self, q: usize, t: usize) -> &[f64] {
        let start = (q * self.cols + t) * self.dim;
        &self.values[start..start + self.dim]
    }

    pub fn cell_mut(&mut self, q: usize, t: usize) -> &mut [f64] {
        let start = (q * self.cols + t) * self.dim;
        &mut self.values[start..start + self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Cell value is `sign(token) * row(|token|)`.
pub fn embed(tokens: &TokenMatrix, table: &EmbeddingTable) -> Result<CircuitTensor> {
    let d = table.dim();
    let pad = table.vocab().padding();
    let mut out = CircuitTensor::zeros(tokens.rows(), tokens.cols(), d);
    for q in 0..tokens.rows() {
        for t in 0..tokens.cols() {
            let tok = tokens.get(q, t);
            let id = tok.unsigned_abs() as usize;
            if id > pad as usize || tok == -pad {
                return Err(validation(format!("token {tok} at ({q}, {t}) outside vocabulary")));
            }
            let sign = if tok < 0 { -1.0 } else { 1.0 };
            for (o, v) in out.cell_mut(q, t).iter_mut().zip(table.row(id)) {
                *o = sign * v;
            }
        }
    }
    Ok(out)
}

/// Nearest token per cell by absolute cosine similarity, signed by the
/// similarity's sign. Background and padding never come out negative. Ties
/// go to the smaller id; an all-zero cell decodes to background.
pub fn decode(tensor: &CircuitTensor, table: &EmbeddingTable) -> Result<TokenMatrix> {
    let (rows, cols, dim) = tensor.shape();
    if dim != table.dim() {
        return Err(validation(format!("tensor feature dim {dim} != embedding dim {}", table.dim())));
    }
    if tensor.values().iter().any(|v| !v.is_finite()) {
        return Err(validation("tensor contains non-finite values"));
    }
    let pad = table.vocab().padding() as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for q in 0..rows {
        for t in 0..cols {
            let v = tensor.cell(q, t);
            let norm = dot(v, v).sqrt();
            if norm == 0.0 {
                data.push(0);
                continue;
            }
            let mut best = 0usize;
            let mut best_abs = -1.0f64;
            let mut best_cos = 0.0f64;
            for k in 0..table.dim() {
                let cos = dot(table.row(k), v) / norm;
                if cos.abs() > best_abs {
                    best = k;
                    best_abs = cos.abs();
                    best_cos = cos;
                }
            }
            let token = if best == 0 || best == pad || best_cos >= 0.0 {
                best as i32
            } else {
                -(best as i32)
            };
            data.push(token);
        }
    }
    Ok(TokenMatrix::from_parts(rows, cols, data))
}

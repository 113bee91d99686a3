use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GateVocabulary;
use crate::error::{validation, Result};

/// Orthonormal token embeddings; row `k` embeds token id `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    seed: u64,
    vocab: GateVocabulary,
    rows: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    /// Orthonormalizes a seeded Gaussian `d x d` matrix (modified Gram-Schmidt,
    /// two passes).
    pub fn build(vocab: &GateVocabulary, seed: u64) -> Self {
        let d = vocab.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        for i in 0..d {
            for _ in 0..2 {
                for j in 0..i {
                    let proj = dot(&rows[i], &rows[j]);
                    let (head, tail) = rows.split_at_mut(i);
                    for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                        *x -= proj * y;
                    }
                }
            }
            let n = dot(&rows[i], &rows[i]).sqrt();
            rows[i].iter_mut().for_each(|x| *x /= n);
        }
        Self { seed, vocab: vocab.clone(), rows }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab(&self) -> &GateVocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, token_id: usize) -> &[f64] {
        &self.rows[token_id]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let d = self.rows.len();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(&self.rows[i], &self.rows[j]) - target).abs());
            }
        }
        worst
    }

    /// Checks shape and orthonormality, e.g. after loading from disk.
    pub fn validate(&self) -> Result<()> {
        let d = self.vocab.dim();
        if self.rows.len() != d || self.rows.iter().any(|r| r.len() != d) {
            return Err(validation(format!("embedding table must be {d} x {d}")));
        }
        if self.orthonormality_error() > 1e-9 {
            return Err(validation("embedding rows are not orthonormal"));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::sim::Statevector;

/// Eigenvalues of a reduced density matrix above this count towards its rank.
pub const RANK_THRESHOLD: f64 = 1e-9;

/// Schmidt rank vector: per-qubit rank of the single-qubit reduced state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Srv(Vec<u8>);

impl Srv {
    pub fn new(ranks: Vec<u8>) -> Result<Self> {
        if ranks.is_empty() || ranks.iter().any(|&r| !(1..=2).contains(&r)) {
            return Err(validation(format!("invalid SRV entries {ranks:?}")));
        }
        Ok(Self(ranks))
    }

    pub fn ranks(&self) -> &[u8] {
        &self.0
    }

    pub fn num_qubits(&self) -> usize {
        self.0.len()
    }

    /// Number of entries equal to 2.
    pub fn entangled_count(&self) -> usize {
        self.0.iter().filter(|&&r| r > 1).count()
    }

    /// A pure state can never have exactly one entangled qubit.
    pub fn is_physical(&self) -> bool {
        self.entangled_count() != 1
    }

    /// Index into [`enumerate_srvs`] for the same qubit count.
    pub fn class_index(&self) -> Option<usize> {
        enumerate_srvs(self.num_qubits()).iter().position(|s| s == self)
    }
}

impl fmt::Display for Srv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, r) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{r}")?;
        }
        f.write_str("]")
    }
}

impl FromStr for Srv {
    type Err = Error;

    /// Accepts `1,2,2` or `[1,2,2]`.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('[').trim_end_matches(']');
        let ranks = inner
            .split(',')
            .map(|p| p.trim().parse::<u8>().map_err(|_| validation(format!("bad SRV `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        Srv::new(ranks)
    }
}

/// Rank of each single-qubit reduced density matrix of a normalized state.
pub fn compute_srv(state: &Statevector) -> Result<Srv> {
    if !state.is_normalized() {
        return Err(validation(format!("state norm {} is not 1", state.norm())));
    }
    let amps = state.amplitudes();
    let q = state.num_qubits();
    let ranks = (0..q)
        .map(|k| {
            let bit = 1usize << k;
            let (mut p0, mut p1) = (0.0f64, 0.0f64);
            let mut off = num_complex::Complex64::new(0.0, 0.0);
            for i in (0..amps.len()).filter(|i| i & bit == 0) {
                let a0 = amps[i];
                let a1 = amps[i | bit];
                p0 += a0.norm_sqr();
                p1 += a1.norm_sqr();
                off += a0 * a1.conj();
            }
            // Closed-form eigenvalues of the 2x2 Hermitian [[p0, off], [off*, p1]].
            let tr = p0 + p1;
            let disc = ((p0 - p1) * (p0 - p1) + 4.0 * off.norm_sqr()).sqrt();
            let small = 0.5 * (tr - disc);
            let large = 0.5 * (tr + disc);
            (large > RANK_THRESHOLD) as u8 + (small > RANK_THRESHOLD) as u8
        })
        .collect();
    Srv::new(ranks)
}

/// Every physically reachable SRV on `q` qubits in lexicographic order:
/// all `{1,2}^q` vectors except those with exactly one 2, `2^q - q` in total.
pub fn enumerate_srvs(q: usize) -> Vec<Srv> {
    assert!((1..=16).contains(&q), "qubit count {q} outside 1..=16");
    (0..1usize << q)
        .map(|bits| {
            // Most significant bit is the first entry, giving lexicographic order.
            Srv((0..q).map(|i| 1 + ((bits >> (q - 1 - i)) & 1) as u8).collect())
        })
        .filter(Srv::is_physical)
        .collect()
}

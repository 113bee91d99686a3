use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::Circuit;
use crate::error::{Error, Result};
use crate::gate::{Gate, GateKind};

/// Independent, reproducible RNG stream for worker/chunk `stream`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gate count uniform in `min..=max`, kind uniform over `pool`, qubit tuple
/// uniform over ordered tuples of distinct qubits.
pub fn sample_random_circuit<R: Rng + ?Sized>(
    pool: &[GateKind],
    qubits: usize,
    min_gates: usize,
    max_gates: usize,
    rng: &mut R,
) -> Result<Circuit> {
    if pool.is_empty() {
        return Err(Error::Spec("empty gate pool".into()));
    }
    if let Some(k) = pool.iter().find(|k| k.arity() > qubits) {
        return Err(Error::Spec(format!("gate {k} does not fit {qubits} qubits")));
    }
    if min_gates > max_gates {
        return Err(Error::Spec(format!("min_gates {min_gates} > max_gates {max_gates}")));
    }
    let n = rng.random_range(min_gates..=max_gates);
    let mut order: Vec<usize> = (0..qubits).collect();
    let mut gates = Vec::with_capacity(n);
    for _ in 0..n {
        let kind = pool[rng.random_range(0..pool.len())];
        // Partial Fisher-Yates: the first `arity` slots are a uniform ordered tuple.
        for i in 0..kind.arity() {
            let j = rng.random_range(i..qubits);
            order.swap(i, j);
        }
        gates.push(Gate::new(kind, order[..kind.arity()].to_vec())?);
    }
    Circuit::new(qubits, gates)
}

/// Class label of the compile task: a non-empty subset of the gate pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSubsetLabel {
    pub index: usize,
    pub kinds: Vec<GateKind>,
}

impl GateSubsetLabel {
    /// Comma-separated gate names, e.g. `h,cx`.
    pub fn name(&self) -> String {
        self.kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
    }
}

/// All `2^n - 1` non-empty subsets ordered by membership bitmask, where bit
/// `i` stands for `pool[i]`.
pub fn enumerate_gate_subsets(pool: &[GateKind]) -> Vec<GateSubsetLabel> {
    assert!(pool.len() <= 16, "gate pool larger than 16 kinds");
    (1usize..1 << pool.len())
        .enumerate()
        .map(|(index, mask)| GateSubsetLabel {
            index,
            kinds: pool.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &k)| k).collect(),
        })
        .collect()
}

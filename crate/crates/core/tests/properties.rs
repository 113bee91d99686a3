use std::collections::BTreeSet;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use uditqc_core::codec::{decode, detokenize, embed, tokenize, EmbeddingTable, GateVocabulary};
use uditqc_core::dataset::{generate_compile_dataset, sample_random_circuit, stream_rng, DatasetSpec, Task};
use uditqc_core::optimize::is_optimized;
use uditqc_core::sim::Statevector;
use uditqc_core::{
    circuit_unitary, compute_srv, frobenius_distance, optimize_circuit, simulate, Circuit, Gate, GateKind,
};

// Rank of every single-qubit reduced density matrix, built explicitly as
// rho = |psi><psi| followed by a partial trace, diagonalized with nalgebra.
fn srv_oracle(state: &Statevector) -> Vec<u8> {
    let q = state.num_qubits();
    let n = 1usize << q;
    let a = state.amplitudes();
    let rho = DMatrix::from_fn(n, n, |i, j| a[i] * a[j].conj());
    (0..q)
        .map(|k| {
            let mut red = DMatrix::<Complex64>::zeros(2, 2);
            for i in 0..n {
                for j in 0..n {
                    // Trace out every qubit except k: the other bits must agree.
                    if (i ^ j) & !(1 << k) == 0 {
                        red[((i >> k) & 1, (j >> k) & 1)] += rho[(i, j)];
                    }
                }
            }
            let eig = red.symmetric_eigen();
            eig.eigenvalues.iter().filter(|&&e| e > 1e-9).count() as u8
        })
        .collect()
}

fn random_circuits(seed: u64, n: usize, qubits: std::ops::RangeInclusive<usize>, gates: (usize, usize), pool: &[GateKind]) -> Vec<Circuit> {
    let mut rng = stream_rng(seed, 0);
    (0..n)
        .map(|_| {
            let q = rng.random_range(qubits.clone());
            let kinds: Vec<GateKind> = pool.iter().copied().filter(|k| k.arity() <= q).collect();
            sample_random_circuit(&kinds, q, gates.0, gates.1, &mut rng).unwrap()
        })
        .collect()
}

#[test]
fn srv_matches_partial_trace_oracle() {
    for c in random_circuits(1, 1_000, 3..=5, (2, 16), &GateKind::COMPILE_POOL) {
        let s = simulate(&c).unwrap();
        let srv = compute_srv(&s).unwrap();
        assert_eq!(srv.ranks(), &srv_oracle(&s)[..], "{}", c.canonical_key());
        assert!(srv.is_physical());
    }
}

#[test]
fn optimizer_preserves_unitary() {
    for c in random_circuits(2, 1_000, 3..=5, (2, 16), &GateKind::COMPILE_POOL) {
        let o = optimize_circuit(&c);
        assert!(is_optimized(&o));
        assert!(o.len() <= c.len() && (c.len() - o.len()) % 2 == 0);
        let d = frobenius_distance(&circuit_unitary(&c).unwrap(), &circuit_unitary(&o).unwrap()).unwrap();
        assert!(d < 1e-9);
    }
}

#[test]
fn simulation_agrees_with_unitary_column() {
    for c in random_circuits(3, 300, 1..=5, (0, 12), &GateKind::COMPILE_POOL) {
        let s = simulate(&c).unwrap();
        let u = circuit_unitary(&c).unwrap();
        assert!(u.is_unitary());
        assert!((s.norm() - 1.0).abs() < 1e-9);
        for i in 0..u.dim() {
            assert!((s.amplitudes()[i] - u.get(i, 0)).norm() < 1e-9);
        }
    }
}

#[test]
fn codec_roundtrip_ten_thousand_circuits() {
    let vocab = GateVocabulary::compile();
    let table = EmbeddingTable::build(&vocab, 42);
    for c in random_circuits(4, 10_000, 3..=8, (2, 52), &GateKind::COMPILE_POOL) {
        let tokens = tokenize(&c, &vocab, 8, 52).unwrap();
        let x = embed(&tokens, &table).unwrap();
        let back = decode(&x, &table).unwrap();
        assert_eq!(back, tokens);
        assert_eq!(detokenize(&back, &vocab).unwrap(), c);
    }
}

#[test]
fn codec_survives_bounded_uniform_noise() {
    let vocab = GateVocabulary::compile();
    let table = EmbeddingTable::build(&vocab, 43);
    let amp = 0.3 / (vocab.dim() as f64).sqrt();
    let mut rng = stream_rng(5, 1);
    for c in random_circuits(5, 1_000, 3..=8, (2, 52), &GateKind::COMPILE_POOL) {
        let tokens = tokenize(&c, &vocab, 8, 52).unwrap();
        let mut x = embed(&tokens, &table).unwrap();
        for v in x.values_mut() {
            *v += rng.random_range(-amp..=amp);
        }
        assert_eq!(decode(&x, &table).unwrap(), tokens);
    }
}

/// Every H-only circuit of length 2..=12 on 3 qubits, optimized: the set of
/// distinct fixpoints the generator should retain for the `{H}` subset.
fn exhaustive_h_fixpoints() -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for len in 2..=12u32 {
        for code in 0..3usize.pow(len) {
            let mut x = code;
            let gates = (0..len)
                .map(|_| {
                    let g = Gate::h(x % 3);
                    x /= 3;
                    g
                })
                .collect();
            out.insert(optimize_circuit(&Circuit::new(3, gates).unwrap()).canonical_key());
        }
    }
    out
}

#[test]
fn h_subset_retains_every_distinct_circuit() {
    let oracle = exhaustive_h_fixpoints();
    assert_eq!(oracle.len(), 16);
    let spec = DatasetSpec::new(Task::Compile, GateKind::COMPILE_POOL.to_vec(), 3, 2, 12, 20_000, 7);
    let spec = DatasetSpec { stall_limit: 2_000, ..spec };
    // Only the {H} subset (label 0) matters; a tiny pool keeps the run short.
    let spec = DatasetSpec { gate_pool: vec![GateKind::H], ..spec };
    let out = generate_compile_dataset(&spec).unwrap();
    let got: BTreeSet<String> = out.records.iter().map(|r| r.canonical_key()).collect();
    assert_eq!(got, oracle);
}

#[test]
fn determinism_of_dataset_bytes() {
    let spec = DatasetSpec::new(Task::Srv, GateKind::ENTANGLEMENT_POOL.to_vec(), 3, 2, 16, 30, 11);
    let dir = tempfile::tempdir().unwrap();
    let a = uditqc_core::dataset::generate_srv_dataset(&spec).unwrap();
    let b = uditqc_core::dataset::generate_srv_dataset(&spec).unwrap();
    let ha = uditqc_core::dataset::write_dataset(dir.path().join("a.jsonl"), &a.records).unwrap();
    let hb = uditqc_core::dataset::write_dataset(dir.path().join("b.jsonl"), &b.records).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(
        std::fs::read(dir.path().join("a.jsonl")).unwrap(),
        std::fs::read(dir.path().join("b.jsonl")).unwrap()
    );
}

#[test]
fn jsonl_roundtrip_thousand_records() {
    let spec = DatasetSpec { stall_limit: 200, ..DatasetSpec::new(Task::Compile, GateKind::COMPILE_POOL.to_vec(), 3, 2, 12, 16, 3) };
    let out = generate_compile_dataset(&spec).unwrap();
    assert!(out.records.len() >= 900, "{}", out.records.len());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    uditqc_core::dataset::write_dataset(&path, &out.records).unwrap();
    assert_eq!(uditqc_core::dataset::read_dataset(&path).unwrap(), out.records);
}

fn arb_circuit() -> impl Strategy<Value = Circuit> {
    (1usize..=6, 0usize..20, any::<u64>()).prop_map(|(q, n, seed)| {
        let mut rng = stream_rng(seed, 0);
        let kinds: Vec<GateKind> = GateKind::ALL.iter().copied().filter(|k| k.arity() <= q).collect();
        sample_random_circuit(&kinds, q, n, n, &mut rng).unwrap()
    })
}

proptest! {
    #[test]
    fn decode_is_scale_invariant(c in arb_circuit(), scale in 0.01f64..100.0, noise_seed in any::<u64>()) {
        let vocab = GateVocabulary::compile();
        let table = EmbeddingTable::build(&vocab, 1);
        let mut x = embed(&tokenize(&c, &vocab, 6, 20).unwrap(), &table).unwrap();
        let mut rng = stream_rng(noise_seed, 0);
        for v in x.values_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        let base = decode(&x, &table).unwrap();
        for v in x.values_mut() {
            *v *= scale;
        }
        prop_assert_eq!(decode(&x, &table).unwrap(), base);
    }

    #[test]
    fn arbitrary_tensors_never_crash_detokenize(seed in any::<u64>()) {
        let vocab = GateVocabulary::entanglement();
        let table = EmbeddingTable::build(&vocab, 2);
        let mut rng = stream_rng(seed, 0);
        let values = (0..3 * 8 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = uditqc_core::codec::CircuitTensor::from_values(3, 8, 4, values).unwrap();
        let tokens = decode(&x, &table).unwrap();
        match detokenize(&tokens, &vocab) {
            Ok(c) => prop_assert!(c.num_qubits() <= 3),
            Err(e) => prop_assert!(e.column < 8),
        }
    }

    #[test]
    fn tokenize_roundtrip(c in arb_circuit()) {
        let vocab = GateVocabulary::new(GateKind::ALL.to_vec()).unwrap();
        let tokens = tokenize(&c, &vocab, 6, 20).unwrap();
        let back = detokenize(&tokens, &vocab).unwrap();
        if c.is_empty() {
            prop_assert!(back.is_empty());
        } else {
            prop_assert_eq!(back, c);
        }
    }
}

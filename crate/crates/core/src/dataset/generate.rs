use std::collections::HashSet;

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::sampling::{enumerate_gate_subsets, sample_random_circuit, stream_rng, GateSubsetLabel};
use super::spec::{CircuitRecord, DatasetSpec, Task};
use crate::circuit::Circuit;
use crate::error::{Error, Result};
use crate::optimize::optimize_circuit;
use crate::sim::{circuit_unitary, simulate};
use crate::srv::{compute_srv, enumerate_srvs, Srv};

/// Chunks sampled per reduction round. Fixed so results do not depend on the
/// size of the worker pool.
const STREAMS_PER_ROUND: u64 = 16;
const SHUFFLE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub records: Vec<CircuitRecord>,
    pub class_names: Vec<String>,
    pub per_class_counts: Vec<usize>,
    pub attempts: u64,
    /// False when some class fell short of `balanced_size` (SRV task only;
    /// compile subsets may legitimately hold fewer distinct circuits).
    pub complete: bool,
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<GenerationOutcome> {
    match spec.task {
        Task::Srv => generate_srv_dataset(spec),
        Task::Compile => generate_compile_dataset(spec),
    }
}

/// Balanced SRV dataset: sample, optimize, dedup, label by SRV class until
/// every class holds `balanced_size` records or the attempt budget runs out.
pub fn generate_srv_dataset(spec: &DatasetSpec) -> Result<GenerationOutcome> {
    spec.validate()?;
    if spec.task != Task::Srv {
        return Err(Error::Spec("generate_srv_dataset needs task = srv".into()));
    }
    let classes = enumerate_srvs(spec.qubits);
    let target = spec.balanced_size;
    let budget = (spec.attempt_factor * target * classes.len()) as u64;
    let mut buckets: Vec<Vec<CircuitRecord>> = vec![Vec::new(); classes.len()];
    let mut seen = HashSet::new();
    let mut attempts = 0u64;
    let mut round = 0u64;

    'outer: while buckets.iter().any(|b| b.len() < target) && attempts < budget {
        let chunks: Vec<Result<Vec<(Circuit, Srv)>>> = (0..STREAMS_PER_ROUND)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(spec.seed, round * STREAMS_PER_ROUND + i);
                (0..spec.chunk_size)
                    .map(|_| {
                        let c = sample_random_circuit(&spec.gate_pool, spec.qubits, spec.min_gates, spec.max_gates, &mut rng)?;
                        let c = optimize_circuit(&c);
                        let srv = compute_srv(&simulate(&c)?)?;
                        Ok((c, srv))
                    })
                    .collect()
            })
            .collect();
        round += 1;
        for chunk in chunks {
            for (circuit, srv) in chunk? {
                if attempts >= budget {
                    break 'outer;
                }
                attempts += 1;
                let label = classes.binary_search(&srv).expect("pure-state SRVs are enumerated");
                if buckets[label].len() >= target {
                    continue;
                }
                if seen.insert(circuit.canonical_key()) {
                    buckets[label].push(CircuitRecord { circuit, label, srv: Some(srv), unitary: None });
                }
            }
        }
    }

    let per_class_counts: Vec<usize> = buckets.iter().map(Vec::len).collect();
    let complete = per_class_counts.iter().all(|&n| n == target);
    let class_names: Vec<String> = classes.iter().map(|s| s.to_string()).collect();
    if !complete {
        warn!(
            "attempt budget exhausted after {attempts} samples; per-class counts {:?} (target {target})",
            class_names.iter().zip(&per_class_counts).collect::<Vec<_>>()
        );
    }
    let mut records: Vec<CircuitRecord> = buckets.into_iter().flatten().collect();
    records.shuffle(&mut stream_rng(spec.seed, SHUFFLE_STREAM));
    info!("generated {} SRV records from {attempts} samples", records.len());
    Ok(GenerationOutcome { records, class_names, per_class_counts, attempts, complete })
}

/// Compile dataset: for every gate subset, circuits drawn only from that
/// subset, optimized and deduplicated, capped at `balanced_size`. Subsets
/// with fewer distinct circuits keep all they yield (sampling stops after
/// `stall_limit` consecutive samples without a new circuit).
pub fn generate_compile_dataset(spec: &DatasetSpec) -> Result<GenerationOutcome> {
    spec.validate()?;
    if spec.task != Task::Compile {
        return Err(Error::Spec("generate_compile_dataset needs task = compile".into()));
    }
    let labels = enumerate_gate_subsets(&spec.gate_pool);
    let per_label: Vec<Result<(Vec<CircuitRecord>, u64)>> =
        labels.par_iter().map(|label| fill_subset(spec, label)).collect();

    let mut records = Vec::new();
    let mut per_class_counts = Vec::with_capacity(labels.len());
    let mut attempts = 0;
    for r in per_label {
        let (recs, n) = r?;
        per_class_counts.push(recs.len());
        attempts += n;
        records.extend(recs);
    }
    records.shuffle(&mut stream_rng(spec.seed, SHUFFLE_STREAM));
    info!("generated {} compile records from {attempts} samples", records.len());
    Ok(GenerationOutcome {
        records,
        class_names: labels.iter().map(GateSubsetLabel::name).collect(),
        per_class_counts,
        attempts,
        complete: true,
    })
}

fn fill_subset(spec: &DatasetSpec, label: &GateSubsetLabel) -> Result<(Vec<CircuitRecord>, u64)> {
    let cap = spec.balanced_size;
    let budget = (spec.attempt_factor * cap) as u64;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut attempts = 0u64;
    let mut stall = 0usize;
    let mut chunk = 0u64;
    while records.len() < cap && attempts < budget && stall < spec.stall_limit {
        let mut rng = stream_rng(spec.seed, ((label.index as u64 + 1) << 32) + chunk);
        chunk += 1;
        for _ in 0..spec.chunk_size {
            if records.len() >= cap || attempts >= budget || stall >= spec.stall_limit {
                break;
            }
            attempts += 1;
            let c = sample_random_circuit(&label.kinds, spec.qubits, spec.min_gates, spec.max_gates, &mut rng)?;
            let c = optimize_circuit(&c);
            if seen.insert(c.canonical_key()) {
                stall = 0;
                let unitary = circuit_unitary(&c)?;
                records.push(CircuitRecord { circuit: c, label: label.index, srv: None, unitary: Some(unitary) });
            } else {
                stall += 1;
            }
        }
    }
    Ok((records, attempts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::GateKind;
    use crate::optimize::is_optimized;

    fn small_srv(balanced: usize, seed: u64) -> DatasetSpec {
        DatasetSpec { chunk_size: 64, ..DatasetSpec::new(Task::Srv, GateKind::ENTANGLEMENT_POOL.to_vec(), 3, 2, 16, balanced, seed) }
    }

    #[test]
    fn srv_dataset_is_balanced_unique_and_labelled() {
        let out = generate_srv_dataset(&small_srv(60, 9)).unwrap();
        assert!(out.complete);
        assert_eq!(out.per_class_counts, vec![60; 5]);
        assert_eq!(out.records.len(), 300);
        let classes = enumerate_srvs(3);
        let mut keys = HashSet::new();
        for r in &out.records {
            assert!(keys.insert(r.canonical_key()));
            assert_eq!(Some(&classes[r.label]), r.srv.as_ref());
            assert!(is_optimized(&r.circuit));
            assert_eq!(compute_srv(&simulate(&r.circuit).unwrap()).unwrap(), classes[r.label]);
        }
    }

    #[test]
    fn identical_seeds_identical_records() {
        let a = generate_srv_dataset(&small_srv(20, 4)).unwrap();
        let b = generate_srv_dataset(&small_srv(20, 4)).unwrap();
        assert_eq!(a.records, b.records);
        let c = generate_srv_dataset(&small_srv(20, 5)).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn exhausted_budget_reports_shortfall() {
        // A single gate cannot entangle three qubits, so [2,2,2] stays empty.
        let spec = DatasetSpec {
            attempt_factor: 2,
            ..DatasetSpec::new(Task::Srv, GateKind::ENTANGLEMENT_POOL.to_vec(), 3, 1, 1, 5, 0)
        };
        let out = generate_srv_dataset(&spec).unwrap();
        assert!(!out.complete);
        assert_eq!(out.per_class_counts[4], 0);
        assert!(out.attempts <= 50);
    }

    #[test]
    fn wrong_task_is_rejected() {
        assert!(generate_compile_dataset(&small_srv(1, 0)).is_err());
    }

    #[test]
    fn compile_records_carry_their_unitary() {
        let spec = DatasetSpec {
            stall_limit: 300,
            ..DatasetSpec::new(Task::Compile, vec![GateKind::H, GateKind::CX, GateKind::SWAP], 3, 2, 6, 40, 1)
        };
        let out = generate_compile_dataset(&spec).unwrap();
        assert_eq!(out.per_class_counts.len(), 7);
        let labels = enumerate_gate_subsets(&spec.gate_pool);
        for r in &out.records {
            let u = circuit_unitary(&r.circuit).unwrap();
            assert!(crate::metric::frobenius_distance(&u, r.unitary.as_ref().unwrap()).unwrap() < 1e-9);
            assert!(r.circuit.uses_only(&labels[r.label].kinds));
            assert!(is_optimized(&r.circuit));
        }
        assert!(out.per_class_counts.iter().all(|&n| n <= 40));
    }
}

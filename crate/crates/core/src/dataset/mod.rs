//! Random-circuit datasets for SRV-conditioned generation and unitary
//! compilation: sampling, peephole optimization, deduplication, class
//! balancing and JSONL persistence.

mod generate;
mod io;
mod sampling;
mod spec;

pub use generate::{generate_compile_dataset, generate_dataset, generate_srv_dataset, GenerationOutcome};
pub use io::{read_dataset, read_manifest, write_dataset, write_manifest, DatasetManifest};
pub use sampling::{enumerate_gate_subsets, sample_random_circuit, stream_rng, GateSubsetLabel};
pub use spec::{CircuitRecord, DatasetSpec, Task};

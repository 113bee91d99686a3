//! Exact circuit semantics, the circuit/tensor codec and random-circuit
//! datasets used to train and evaluate UDiT circuit generators.
//!
//! Amplitude indexing convention: basis index `i` stores qubit `k` at bit
//! position `k`, so qubit 0 is the least significant bit. The codec, the
//! simulator and every oracle in the test suites share this convention.

pub mod circuit;
pub mod codec;
pub mod dataset;
pub mod error;
pub mod gate;
pub mod metric;
pub mod optimize;
pub mod sim;
pub mod srv;

pub use circuit::Circuit;
pub use error::{Error, Result};
pub use gate::{Gate, GateKind};
pub use metric::{frobenius_distance, phase_insensitive_distance};
pub use optimize::optimize_circuit;
pub use sim::{circuit_unitary, simulate, Statevector, UnitaryMatrix};
pub use srv::{compute_srv, enumerate_srvs, Srv};

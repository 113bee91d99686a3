//! Circuit <-> token matrix <-> continuous tensor mapping.
//!
//! A circuit on a `Q x T` canvas becomes an integer token matrix: the gate at
//! time step `t` fills column `t`, target nodes carry `+id(kind)`, control
//! nodes `-id(kind)`, untouched qubits the background token `0`. Unused columns
//! and unused qubit rows hold the padding token `N + 1`. Each token is then
//! replaced by a row of an orthonormal embedding table (negated for
//! controls), giving a `Q x T x d` tensor with `d = N + 2`.

mod embedding;
mod tensor;
mod tokens;
mod vocab;

pub use embedding::EmbeddingTable;
pub use tensor::{decode, embed, CircuitTensor};
pub use tokens::{detokenize, tokenize, ErrorCircuit, ErrorReason, TokenMatrix};
pub use vocab::GateVocabulary;

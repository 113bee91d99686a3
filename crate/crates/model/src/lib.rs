//! Diffusion model for quantum circuit generation: a U-shaped transformer
//! denoiser over the circuit canvas, its conditioning pathways, the
//! forward/reverse diffusion processes, training, and evaluation protocols.
//!
//! Everything runs on the CPU through candle. Randomness always comes from
//! explicit ChaCha streams so runs are reproducible from their seeds.

pub mod checkpoint;
pub mod conditioning;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod params;
pub mod train;
pub mod udit;

pub use conditioning::{Condition, ConditioningConfig, UEncConfig};
pub use diffusion::{cfg_epsilon, inpaint_sample, q_sample, sample, Denoiser, InpaintSpec, NoiseSchedule, SamplerConfig, SamplerKind, TargetOracle};
pub use error::{ModelError, Result};
pub use model::{CircuitDenoiser, ModelConfig};
pub use params::{Init, ParamStore};
pub use udit::{UDiT, UDiTConfig};
pub use train::{train, training_loss, OneCycle, TrainConfig, TrainObserver, TrainingSet};

use candle_core::{DType, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{Condition, Conditioner, ConditioningConfig};
use crate::diffusion::Denoiser;
use crate::error::{invalid, Result};
use crate::params::ParamStore;
use crate::udit::{UDiT, UDiTConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub udit: UDiTConfig,
    pub conditioning: ConditioningConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.udit.validate()?;
        self.conditioning.validate()?;
        if let Some(u) = &self.conditioning.unitary {
            if u.qubits > self.udit.qubits {
                return Err(invalid(format!(
                    "conditioning.unitary.qubits {} exceeds udit.qubits {}",
                    u.qubits, self.udit.qubits
                )));
            }
        }
        Ok(())
    }
}

/// UDiT backbone plus its conditioning pathways, sharing one parameter store.
#[derive(Debug)]
pub struct CircuitDenoiser {
    cfg: ModelConfig,
    store: ParamStore,
    net: UDiT,
    cond: Conditioner,
}

impl CircuitDenoiser {
    pub fn new(cfg: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        Self::with_store(cfg, ParamStore::new(seed, dtype))
    }

    /// Same parameters as [`CircuitDenoiser::new`], but forward passes build
    /// no autograd graph. Used for sampling from checkpoints.
    pub fn for_inference(cfg: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        Self::with_store(cfg, ParamStore::frozen(seed, dtype))
    }

    fn with_store(cfg: &ModelConfig, mut store: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let net = UDiT::new(&mut store, &cfg.udit)?;
        let cond = Conditioner::new(&mut store, &cfg.conditioning, cfg.udit.cond_dim)?;
        Ok(Self { cfg: cfg.clone(), store, net, cond })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn net(&self) -> &UDiT {
        &self.net
    }

    pub fn conditioner(&self) -> &Conditioner {
        &self.cond
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Condition vectors for a batch; `rng` enables training-mode dropout
    /// inside the unitary encoder.
    pub fn condition_vectors(&self, ts: &[usize], cond: &Condition, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        self.cond.forward(ts, cond, self.dtype(), rng)
    }

    pub fn forward(&self, x_t: &Tensor, ts: &[usize], cond: &Condition, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let c = self.condition_vectors(ts, cond, rng)?;
        self.net.forward(&x_t.to_dtype(self.dtype())?, &c)
    }
}

impl Denoiser for CircuitDenoiser {
    fn predict(&self, x_t: &Tensor, ts: &[usize], cond: &Condition) -> Result<Tensor> {
        self.forward(x_t, ts, cond, None)
    }

    fn predict_train(&self, x_t: &Tensor, ts: &[usize], cond: &Condition, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        self.forward(x_t, ts, cond, Some(rng))
    }

    fn null_label(&self) -> usize {
        self.cfg.conditioning.null_label()
    }

    fn drop_labels(&self, cond: &Condition, rng: &mut ChaCha8Rng) -> Result<Condition> {
        let table = self.cond.label_table();
        let mut out = cond.clone();
        for (i, l) in out.labels.iter_mut().enumerate() {
            *l = table.select(*l, true, rng)?;
            if *l == table.null_index() {
                out.unitary_dropped[i] = true;
            }
        }
        Ok(out)
    }
}

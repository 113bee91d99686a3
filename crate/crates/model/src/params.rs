use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{ModelError, Result};

/// How a parameter is filled when first created.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Normal(f64),
    /// Glorot uniform with explicit fan-in / fan-out.
    Xavier { fan_in: usize, fan_out: usize },
}

/// Named, seeded parameter collection.
///
/// Every parameter draws its initial values from a ChaCha stream derived
/// from the store seed and the parameter name, so initialization does not
/// depend on construction order.
#[derive(Debug)]
pub struct ParamStore {
    seed: u64,
    dtype: DType,
    device: Device,
    vars: BTreeMap<String, Var>,
    frozen: bool,
}

fn name_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(name.as_bytes()).finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self { seed, dtype, device: Device::Cpu, vars: BTreeMap::new(), frozen: false }
    }

    /// A store whose handed-out tensors share storage with the variables but
    /// record no autograd graph, so inference does not retain activations.
    /// `set` and `load` still update every handed-out tensor.
    pub fn frozen(seed: u64, dtype: DType) -> Self {
        Self { frozen: true, ..Self::new(seed, dtype) }
    }

    fn hand_out(&self, v: &Var) -> Tensor {
        if self.frozen {
            v.as_tensor().detach()
        } else {
            v.as_tensor().clone()
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Returns the parameter `name`, creating it with `init` on first use.
    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(ModelError::Validation(format!(
                    "parameter {name} has shape {:?}, requested {shape:?}",
                    v.dims()
                )));
            }
            return Ok(self.hand_out(v));
        }
        let n: usize = shape.iter().product();
        let mut rng = name_rng(self.seed, name);
        let values: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).map_err(|e| ModelError::Validation(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let d = Uniform::new_inclusive(-a, a).map_err(|e| ModelError::Validation(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = self.hand_out(&var);
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    /// Parameter names in sorted order.
    pub fn names(&self) -> Vec<String> {
        self.vars.keys().cloned().collect()
    }

    /// Variables in name order (the optimizer's iteration order).
    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let v = self
            .vars
            .get(name)
            .ok_or_else(|| ModelError::Validation(format!("unknown parameter {name}")))?;
        if v.dims() != value.dims() {
            return Err(ModelError::Validation(format!(
                "parameter {name} has shape {:?}, got {:?}",
                v.dims(),
                value.dims()
            )));
        }
        v.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// Overwrites every parameter accepted by `filter` with N(0, std²)
    /// values. Used to leave the identity-at-init regime in tests.
    pub fn randomize(&self, seed: u64, std: f64, filter: impl Fn(&str) -> bool) -> Result<()> {
        let d = Normal::new(0.0, std).map_err(|e| ModelError::Validation(e.to_string()))?;
        for (name, v) in &self.vars {
            if !filter(name) {
                continue;
            }
            let mut rng = name_rng(seed ^ 0x9e37_79b9_7f4a_7c15, name);
            let values: Vec<f64> = (0..v.elem_count()).map(|_| d.sample(&mut rng)).collect();
            let t = Tensor::from_vec(values, v.dims(), &self.device)?.to_dtype(self.dtype)?;
            v.set(&t)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let map: BTreeMap<&str, Tensor> = self.vars.iter().map(|(k, v)| (k.as_str(), v.as_tensor().clone())).collect();
        candle_core::safetensors::save(&map.into_iter().collect(), path)?;
        Ok(())
    }

    /// Loads every parameter present in the file; names absent from the store
    /// are rejected, names absent from the file keep their current values.
    pub fn load(&self, path: impl AsRef<Path>) -> Result<usize> {
        let loaded = candle_core::safetensors::load(path, &self.device)?;
        for (name, t) in &loaded {
            self.set(name, t)?;
        }
        Ok(loaded.len())
    }

    /// Stable digest of every parameter value, in name order.
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, v) in &self.vars {
            h.update(name.as_bytes());
            for x in v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()? {
                h.update(x.to_le_bytes());
            }
        }
        Ok(hex::encode(h.finalize()))
    }
}

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uditqc_core::codec::{embed, tokenize, EmbeddingTable};
use uditqc_core::dataset::{stream_rng, CircuitRecord};

use crate::conditioning::{unitary_tensor, Condition};
use crate::diffusion::{gaussian, q_sample, Denoiser, NoiseSchedule};
use crate::error::{invalid, ModelError, Result};
use crate::model::CircuitDenoiser;
use crate::nn::tensor_from_f64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_timesteps")]
    pub timesteps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_warmup")]
    pub warmup_frac: f64,
    /// Start and final learning rates are `lr / final_div`.
    #[serde(default = "default_div")]
    pub final_div: f64,
    pub seed: u64,
    /// Checkpoint every this many epochs (the last epoch always checkpoints).
    #[serde(default = "one")]
    pub checkpoint_every: usize,
    /// A batch loss above this (or non-finite) aborts training.
    #[serde(default = "default_divergence")]
    pub divergence_loss: f64,
}

fn default_timesteps() -> usize {
    1000
}
fn default_lr() -> f64 {
    3e-4
}
fn default_weight_decay() -> f64 {
    0.01
}
fn default_warmup() -> f64 {
    0.1
}
fn default_div() -> f64 {
    25.0
}
fn one() -> usize {
    1
}
fn default_divergence() -> f64 {
    1e3
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            timesteps: default_timesteps(),
            epochs,
            batch_size,
            lr: default_lr(),
            weight_decay: default_weight_decay(),
            warmup_frac: default_warmup(),
            final_div: default_div(),
            seed,
            checkpoint_every: 1,
            divergence_loss: default_divergence(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("train.epochs and train.batch_size must be at least 1"));
        }
        if !(self.lr > 0.0) || !(self.final_div >= 1.0) {
            return Err(invalid("train.lr must be positive and train.final_div at least 1"));
        }
        if !(0.0..1.0).contains(&self.warmup_frac) || self.weight_decay < 0.0 {
            return Err(invalid("train.warmup_frac must lie in [0, 1) and train.weight_decay be non-negative"));
        }
        if self.timesteps < 2 || self.checkpoint_every == 0 {
            return Err(invalid("train.timesteps must be at least 2 and train.checkpoint_every positive"));
        }
        Ok(())
    }
}

/// Linear warm-up from `peak / div` to `peak`, then cosine annealing back
/// down to `peak / div`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycle {
    pub total_steps: usize,
    pub peak: f64,
    pub warmup_frac: f64,
    pub div: f64,
}

impl OneCycle {
    pub fn lr(&self, step: usize) -> f64 {
        let low = self.peak / self.div;
        let warm = ((self.total_steps as f64) * self.warmup_frac).round().max(1.0) as usize;
        if step < warm {
            return low + (self.peak - low) * step as f64 / warm as f64;
        }
        let rest = self.total_steps.saturating_sub(warm).max(1);
        let p = ((step - warm) as f64 / rest as f64).min(1.0);
        low + (self.peak - low) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// Clean encoded circuits and their conditions.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub x0: Tensor,
    pub cond: Condition,
}

impl TrainingSet {
    pub fn new(x0: Tensor, cond: Condition) -> Result<Self> {
        let n = x0.dims4()?.0;
        if n == 0 || cond.batch() != n {
            return Err(invalid(format!("training set has {n} tensors and {} conditions", cond.batch())));
        }
        Ok(Self { x0, cond })
    }

    pub fn len(&self) -> usize {
        self.cond.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tokenizes and embeds records on a `canvas = (Q, T)` grid. Records
    /// carrying a unitary become unitary-conditioned examples.
    pub fn from_records(records: &[CircuitRecord], table: &EmbeddingTable, canvas: (usize, usize), dtype: DType) -> Result<Self> {
        let (q, t) = canvas;
        let mut values = Vec::with_capacity(records.len() * q * t * table.dim());
        for r in records {
            let tokens = tokenize(&r.circuit, table.vocab(), q, t)?;
            values.extend(embed(&tokens, table)?.into_values());
        }
        let x0 = tensor_from_f64(values, &[records.len(), q, t, table.dim()], dtype)?;
        let labels = records.iter().map(|r| r.label).collect();
        let with_unitary = records.iter().filter(|r| r.unitary.is_some()).count();
        let cond = if with_unitary == 0 {
            Condition::labels(labels)
        } else if with_unitary == records.len() {
            let us: Vec<_> = records.iter().map(|r| r.unitary.clone().expect("checked")).collect();
            Condition::with_unitaries(labels, unitary_tensor(&us, dtype)?)
        } else {
            return Err(invalid("records mix unitary-conditioned and plain examples"));
        };
        Self::new(x0, cond)
    }
}

/// Noise-prediction loss on one batch: `t` uniform over the chain, Gaussian
/// noise, label dropout, mean squared error over every element.
pub fn training_loss<M: Denoiser + ?Sized>(
    model: &M,
    x0: &Tensor,
    cond: &Condition,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let b = x0.dim(0)?;
    let ts: Vec<usize> = (0..b).map(|_| rng.random_range(0..schedule.len())).collect();
    let eps = gaussian(x0.dims(), x0.dtype(), rng)?;
    let x_t = q_sample(x0, &ts, &eps, schedule)?;
    let cond = model.drop_labels(cond, rng)?;
    let pred = model.predict_train(&x_t, &ts, &cond, rng)?;
    Ok((pred - eps)?.sqr()?.mean_all()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Hooks for logging and checkpointing during [`train`].
pub trait TrainObserver {
    fn on_step(&mut self, log: &StepLog) -> Result<()> {
        let _ = log;
        Ok(())
    }

    /// Called after an epoch that should be checkpointed.
    fn on_checkpoint(&mut self, epoch: usize, step: usize, model: &CircuitDenoiser) -> Result<()> {
        let _ = (epoch, step, model);
        Ok(())
    }

    /// Human-readable location of the most recent good checkpoint.
    fn last_checkpoint(&self) -> Option<String> {
        None
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub epoch_losses: Vec<f64>,
}

/// Shuffled mini-batch AdamW training under a one-cycle learning rate.
pub fn train(
    model: &CircuitDenoiser,
    data: &TrainingSet,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.timesteps != model.config().conditioning.timesteps {
        return Err(invalid(format!(
            "train.timesteps {} != model conditioning.timesteps {}",
            cfg.timesteps,
            model.config().conditioning.timesteps
        )));
    }
    let schedule = NoiseSchedule::cosine(cfg.timesteps)?;
    let n = data.len();
    let per_epoch = n.div_ceil(cfg.batch_size);
    let policy = OneCycle {
        total_steps: per_epoch * cfg.epochs,
        peak: cfg.lr,
        warmup_frac: cfg.warmup_frac,
        div: cfg.final_div,
    };
    let mut opt = AdamW::new(
        model.store().vars(),
        ParamsAdamW { lr: policy.lr(0), beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: cfg.weight_decay },
    )?;
    let x0 = data.x0.to_dtype(model.dtype())?;
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(cfg.seed, 2 * epoch as u64));
        let mut rng = stream_rng(cfg.seed, 2 * epoch as u64 + 1);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let ids = Tensor::from_vec(chunk.iter().map(|&i| i as u32).collect::<Vec<_>>(), chunk.len(), x0.device())?;
            let xb = x0.index_select(&ids, 0)?;
            let cb = data.cond.select(chunk)?;
            let lr = policy.lr(step);
            let loss = training_loss(model, &xb, &cb, &schedule, &mut rng)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() || value > cfg.divergence_loss {
                let last = observer.last_checkpoint().unwrap_or_else(|| "none".into());
                return Err(ModelError::Numeric(format!(
                    "training diverged at step {step} (epoch {epoch}) with loss {value}; last good checkpoint: {last}"
                )));
            }
            opt.set_learning_rate(lr);
            opt.backward_step(&loss)?;
            observer.on_step(&StepLog { step, epoch, lr, loss: value })?;
            total += value * chunk.len() as f64;
            step += 1;
        }
        let mean = total / n as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        epoch_losses.push(mean);
        if (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs {
            observer.on_checkpoint(epoch, step, model)?;
        }
    }
    Ok(TrainReport { steps: step, epoch_losses })
}

//! Forward noising process, guidance, and reverse-process samplers.

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use uditqc_core::codec::{embed, CircuitTensor, EmbeddingTable, TokenMatrix};

use crate::conditioning::Condition;
use crate::error::{invalid, ModelError, Result};
use crate::nn::tensor_from_f64;

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Anything that predicts the noise in `x_t`.
pub trait Denoiser {
    fn predict(&self, x_t: &Tensor, ts: &[usize], cond: &Condition) -> Result<Tensor>;

    /// Prediction in training mode (dropout active).
    fn predict_train(&self, x_t: &Tensor, ts: &[usize], cond: &Condition, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let _ = rng;
        self.predict(x_t, ts, cond)
    }

    fn null_label(&self) -> usize;

    /// Training-time label dropout; identity by default.
    fn drop_labels(&self, cond: &Condition, rng: &mut ChaCha8Rng) -> Result<Condition> {
        let _ = rng;
        Ok(cond.clone())
    }
}

/// Discrete variance schedule indexed `0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Squared-cosine schedule: step `i` moves from `f(i)` to `f(i + 1)` with
    /// `f(s) = cos²(((s/T + 0.008) / 1.008) π/2)`, each β clipped at 0.999.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(invalid(format!("schedule needs at least 2 steps, got {steps}")));
        }
        let f = |s: f64| {
            let x = ((s / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let beta: Vec<f64> = (0..steps).map(|i| (1.0 - f(i as f64 + 1.0) / f(i as f64)).min(MAX_BETA)).collect();
        Ok(Self::from_betas(beta))
    }

    pub fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Self { beta, alpha, alpha_bar }
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `ᾱ` one step before `t`; 1 before the first step.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Variance of the true posterior `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta[t] * (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bar[t])
    }
}

/// Standard normal tensor drawn from `rng`.
pub fn gaussian(shape: &[usize], dtype: DType, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let vals: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    tensor_from_f64(vals, shape, dtype)
}

fn per_example(vals: Vec<f64>, like: &Tensor) -> Result<Tensor> {
    let mut shape = vec![vals.len()];
    shape.extend(std::iter::repeat_n(1, like.rank() - 1));
    tensor_from_f64(vals, &shape, like.dtype())
}

/// `x_t = sqrt(ᾱ_t) x0 + sqrt(1 - ᾱ_t) eps`, one timestep per example.
pub fn q_sample(x0: &Tensor, ts: &[usize], eps: &Tensor, schedule: &NoiseSchedule) -> Result<Tensor> {
    if x0.dims() != eps.dims() {
        return Err(invalid(format!("noise shape {:?} != sample shape {:?}", eps.dims(), x0.dims())));
    }
    if ts.len() != x0.dim(0)? {
        return Err(invalid(format!("{} timesteps for batch of {}", ts.len(), x0.dim(0)?)));
    }
    if let Some(&t) = ts.iter().find(|&&t| t >= schedule.len()) {
        return Err(invalid(format!("timestep {t} outside 0..{}", schedule.len())));
    }
    let a = per_example(ts.iter().map(|&t| schedule.alpha_bar[t].sqrt()).collect(), x0)?;
    let s = per_example(ts.iter().map(|&t| (1.0 - schedule.alpha_bar[t]).sqrt()).collect(), x0)?;
    Ok((x0.broadcast_mul(&a)? + eps.broadcast_mul(&s)?)?)
}

/// Guided noise estimate `e_null + s (e_cond - e_null)`; `s = 1` returns the
/// conditional prediction without evaluating the null branch.
pub fn cfg_epsilon<M: Denoiser + ?Sized>(model: &M, x_t: &Tensor, ts: &[usize], cond: &Condition, scale: f64) -> Result<Tensor> {
    if !(scale >= 1.0) {
        return Err(invalid(format!("guidance scale {scale} must be at least 1")));
    }
    let e_cond = model.predict(x_t, ts, cond)?;
    if scale == 1.0 {
        return Ok(e_cond);
    }
    let e_null = model.predict(x_t, ts, &cond.null(model.null_label()))?;
    Ok((&e_null + ((e_cond - &e_null)? * scale)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Every step of the chain with the fixed posterior variance.
    Ancestral,
    /// Evenly strided subset of steps with the implicit (η-controlled) update.
    Strided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub steps: usize,
    #[serde(default = "unit_scale")]
    pub cfg_scale: f64,
    #[serde(default)]
    pub eta: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl SamplerConfig {
    pub fn strided(steps: usize, cfg_scale: f64) -> Self {
        Self { kind: SamplerKind::Strided, steps, cfg_scale, eta: 0.0 }
    }

    pub fn ancestral(steps: usize, cfg_scale: f64) -> Self {
        Self { kind: SamplerKind::Ancestral, steps, cfg_scale, eta: 0.0 }
    }

    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.steps == 0 || self.steps > schedule.len() {
            return Err(invalid(format!("sampler.steps {} outside 1..={}", self.steps, schedule.len())));
        }
        if self.kind == SamplerKind::Ancestral && self.steps != schedule.len() {
            return Err(invalid(format!(
                "ancestral sampler runs all {} steps; got sampler.steps = {}",
                schedule.len(),
                self.steps
            )));
        }
        if !(self.cfg_scale >= 1.0) {
            return Err(invalid(format!("sampler.cfg_scale {} must be at least 1", self.cfg_scale)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid(format!("sampler.eta {} outside [0, 1]", self.eta)));
        }
        Ok(())
    }

    /// Timesteps visited, in descending order.
    pub fn timesteps(&self, schedule: &NoiseSchedule) -> Vec<usize> {
        let last = schedule.len() - 1;
        let mut ts: Vec<usize> = if self.steps == 1 {
            vec![last]
        } else {
            (0..self.steps)
                .map(|i| ((i as f64) * last as f64 / (self.steps - 1) as f64).round() as usize)
                .collect()
        };
        ts.dedup();
        ts.reverse();
        ts
    }
}

/// Cells to hold fixed during sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintSpec {
    known: TokenMatrix,
    mask: Vec<bool>,
}

impl InpaintSpec {
    /// `mask` is row-major `Q x T`, true where `known` is enforced.
    pub fn new(known: TokenMatrix, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != known.rows() * known.cols() {
            return Err(invalid(format!(
                "mask has {} cells, token matrix has {}",
                mask.len(),
                known.rows() * known.cols()
            )));
        }
        Ok(Self { known, mask })
    }

    pub fn known(&self) -> &TokenMatrix {
        &self.known
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_masked(&self, q: usize, t: usize) -> bool {
        self.mask[q * self.known.cols() + t]
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Embedded known tensor `(1, Q, T, d)` and broadcastable mask `(1, Q, T, 1)`.
    pub fn tensors(&self, table: &EmbeddingTable, dtype: DType) -> Result<(Tensor, Tensor)> {
        let mut known = self.known.clone();
        for q in 0..known.rows() {
            for t in 0..known.cols() {
                if !self.is_masked(q, t) {
                    known.set(q, t, 0);
                }
            }
        }
        let x = embed(&known, table)?;
        let (r, c, d) = x.shape();
        let x = tensor_from_f64(x.into_values(), &[1, r, c, d], dtype)?;
        let m = tensor_from_f64(self.mask.iter().map(|&b| b as u8 as f64).collect(), &[1, r, c, 1], dtype)?;
        Ok((x, m))
    }
}

struct Constraint {
    known: Tensor,
    mask: Tensor,
    keep: Tensor,
}

impl Constraint {
    fn apply(&self, x: &Tensor, replacement: &Tensor) -> Result<Tensor> {
        Ok((x.broadcast_mul(&self.keep)? + replacement.broadcast_mul(&self.mask)?)?)
    }

    /// Enforced cells re-noised to level `t`.
    fn renoise(&self, x: &Tensor, t: usize, schedule: &NoiseSchedule, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let b = x.dim(0)?;
        let known = self.known.broadcast_as(x.shape())?.contiguous()?;
        let eps = gaussian(x.dims(), x.dtype(), rng)?;
        let noised = q_sample(&known, &vec![t; b], &eps, schedule)?;
        self.apply(x, &noised)
    }

    fn exact(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, &self.known.broadcast_as(x.shape())?.contiguous()?)
    }
}

fn check_finite(x: &Tensor, step: usize) -> Result<()> {
    let s = x.abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !s.is_finite() {
        return Err(ModelError::Numeric(format!("sampler state became non-finite at timestep {step}")));
    }
    Ok(())
}

/// Draws `cond.batch()` samples of shape `(Q, T, d)` from pure noise.
pub fn sample<M: Denoiser + ?Sized>(
    model: &M,
    cond: &Condition,
    shape: (usize, usize, usize),
    sampler: &SamplerConfig,
    schedule: &NoiseSchedule,
    dtype: DType,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    run_sampler(model, cond, shape, sampler, schedule, dtype, rng, None)
}

/// Like [`sample`], with the cells of `spec` pinned: re-noised to the
/// current level after every step and set exactly at the end.
#[allow(clippy::too_many_arguments)]
pub fn inpaint_sample<M: Denoiser + ?Sized>(
    model: &M,
    cond: &Condition,
    spec: &InpaintSpec,
    sampler: &SamplerConfig,
    schedule: &NoiseSchedule,
    table: &EmbeddingTable,
    dtype: DType,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let (known, mask) = spec.tensors(table, dtype)?;
    let keep = (mask.ones_like()? - &mask)?;
    let shape = (spec.known().rows(), spec.known().cols(), table.dim());
    run_sampler(model, cond, shape, sampler, schedule, dtype, rng, Some(Constraint { known, mask, keep }))
}

#[allow(clippy::too_many_arguments)]
fn run_sampler<M: Denoiser + ?Sized>(
    model: &M,
    cond: &Condition,
    (q, t_len, d): (usize, usize, usize),
    sampler: &SamplerConfig,
    schedule: &NoiseSchedule,
    dtype: DType,
    rng: &mut ChaCha8Rng,
    constraint: Option<Constraint>,
) -> Result<Tensor> {
    sampler.validate(schedule)?;
    let b = cond.batch();
    if b == 0 {
        return Err(invalid("empty sampling batch"));
    }
    let dims = [b, q, t_len, d];
    let mut x = gaussian(&dims, dtype, rng)?;
    let ts = sampler.timesteps(schedule);
    for (i, &t) in ts.iter().enumerate() {
        let eps = cfg_epsilon(model, &x, &vec![t; b], cond, sampler.cfg_scale)?;
        let ab = schedule.alpha_bar[t];
        let prev = ts.get(i + 1).copied();
        x = match sampler.kind {
            SamplerKind::Ancestral => {
                let coef = schedule.beta[t] / (1.0 - ab).sqrt();
                let mean = ((&x - (eps * coef)?)? / schedule.alpha[t].sqrt())?;
                if t > 0 {
                    let z = gaussian(&dims, dtype, rng)?;
                    (mean + (z * schedule.posterior_variance(t).sqrt())?)?
                } else {
                    mean
                }
            }
            SamplerKind::Strided => {
                let ab_prev = prev.map_or(1.0, |p| schedule.alpha_bar[p]);
                let x0 = ((&x - (&eps * (1.0 - ab).sqrt())?)? / ab.sqrt())?;
                let sigma = sampler.eta * ((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)).max(0.0).sqrt();
                let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
                let mut next = ((x0 * ab_prev.sqrt())? + (eps * dir)?)?;
                if sigma > 0.0 {
                    next = (next + (gaussian(&dims, dtype, rng)? * sigma)?)?;
                }
                next
            }
        };
        if let Some(c) = &constraint {
            x = match prev {
                Some(p) => c.renoise(&x, p, schedule, rng)?,
                None => c.exact(&x)?,
            };
        }
    }
    check_finite(&x, 0)?;
    Ok(x)
}

/// Closed-form denoiser for a fixed clean target `x0*`: returns the noise
/// that would turn `x0*` into `x_t`. It ignores the condition, so guidance
/// is a no-op; useful as a reference for samplers and evaluation.
#[derive(Debug, Clone)]
pub struct TargetOracle {
    target: Tensor,
    schedule: NoiseSchedule,
    null_label: usize,
}

impl TargetOracle {
    /// `target`: `(1, Q, T, d)` or one entry per batch element.
    pub fn new(target: Tensor, schedule: NoiseSchedule, null_label: usize) -> Self {
        Self { target, schedule, null_label }
    }
}

impl Denoiser for TargetOracle {
    fn predict(&self, x_t: &Tensor, ts: &[usize], _cond: &Condition) -> Result<Tensor> {
        let target = self.target.to_dtype(x_t.dtype())?.broadcast_as(x_t.shape())?;
        let a = per_example(ts.iter().map(|&t| self.schedule.alpha_bar[t].sqrt()).collect(), x_t)?;
        let s = per_example(ts.iter().map(|&t| (1.0 - self.schedule.alpha_bar[t]).sqrt()).collect(), x_t)?;
        Ok((x_t - target.broadcast_mul(&a)?)?.broadcast_div(&s)?)
    }

    fn null_label(&self) -> usize {
        self.null_label
    }
}

/// Splits a `(B, Q, T, d)` batch into per-example codec tensors.
pub fn to_circuit_tensors(x: &Tensor) -> Result<Vec<CircuitTensor>> {
    let (b, q, t, d) = x.dims4()?;
    let flat = x.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    flat.chunks(q * t * d)
        .take(b)
        .map(|c| Ok(CircuitTensor::from_values(q, t, d, c.to_vec())?))
        .collect()
}

/// Stacks codec tensors into a `(B, Q, T, d)` batch.
pub fn from_circuit_tensors(xs: &[CircuitTensor], dtype: DType) -> Result<Tensor> {
    let first = xs.first().ok_or_else(|| invalid("no tensors to stack"))?;
    let (q, t, d) = first.shape();
    let mut vals = Vec::with_capacity(xs.len() * q * t * d);
    for x in xs {
        if x.shape() != (q, t, d) {
            return Err(invalid(format!("tensor shape {:?} != {:?}", x.shape(), (q, t, d))));
        }
        vals.extend_from_slice(x.values());
    }
    Ok(Tensor::from_vec(vals, (xs.len(), q, t, d), &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_invariants() {
        for steps in [100, 1000] {
            let s = NoiseSchedule::cosine(steps).unwrap();
            assert_eq!(s.len(), steps);
            assert!(s.beta().iter().all(|&b| b > 0.0 && b <= MAX_BETA));
            assert!(s.alpha_bar().windows(2).all(|w| w[1] < w[0]));
        }
        let s = NoiseSchedule::cosine(1000).unwrap();
        assert!(s.alpha_bar()[0] > 0.999);
        assert!(s.alpha_bar()[999] < 1e-3);
        assert!(NoiseSchedule::cosine(1).is_err());
    }

    #[test]
    fn strided_timesteps() {
        let s = NoiseSchedule::cosine(1000).unwrap();
        let ts = SamplerConfig::strided(50, 1.0).timesteps(&s);
        assert_eq!(ts.len(), 50);
        assert_eq!(ts[0], 999);
        assert_eq!(*ts.last().unwrap(), 0);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(SamplerConfig::strided(1, 1.0).timesteps(&s), vec![999]);
        assert_eq!(SamplerConfig::ancestral(1000, 1.0).timesteps(&s).len(), 1000);
        assert!(SamplerConfig::ancestral(100, 1.0).validate(&s).is_err());
        assert!(SamplerConfig::strided(1001, 1.0).validate(&s).is_err());
        assert!(SamplerConfig::strided(10, 0.5).validate(&s).is_err());
    }

    #[test]
    fn q_sample_limits() {
        let s = NoiseSchedule::cosine(1000).unwrap();
        let x0 = Tensor::new(&[[1.0f64, -2.0]], &Device::Cpu).unwrap();
        let zero = x0.zeros_like().unwrap();
        let y = q_sample(&x0, &[10], &zero, &s).unwrap().to_vec2::<f64>().unwrap();
        let a = s.alpha_bar()[10].sqrt();
        assert_eq!(y, vec![vec![a, -2.0 * a]]);
        let eps = Tensor::new(&[[0.3f64, 0.7]], &Device::Cpu).unwrap();
        let y = q_sample(&x0, &[999], &eps, &s).unwrap().to_vec2::<f64>().unwrap();
        assert!((y[0][0] - 0.3).abs() < 1e-3 && (y[0][1] - 0.7).abs() < 1e-3);
        assert!(q_sample(&x0, &[1000], &eps, &s).is_err());
        assert!(q_sample(&x0, &[1, 2], &eps, &s).is_err());
    }

    #[test]
    fn inpaint_spec_shape_check() {
        let known = TokenMatrix::filled(2, 3, 0);
        assert!(InpaintSpec::new(known.clone(), vec![true; 5]).is_err());
        let spec = InpaintSpec::new(known, vec![true, false, false, true, true, true]).unwrap();
        assert_eq!(spec.masked_count(), 4);
        assert!(spec.is_masked(1, 0) && !spec.is_masked(0, 1));
    }
}

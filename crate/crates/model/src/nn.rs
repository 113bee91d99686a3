//! Differentiable building blocks on top of candle tensors. Parameters are
//! pulled from a [`ParamStore`] by name at construction time.

use candle_core::{DType, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::params::{Init, ParamStore};

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let init = Init::Xavier { fan_in, fan_out };
        Self::with_init(store, name, fan_in, fan_out, init)
    }

    /// Weight and bias both start at zero.
    pub fn zeroed(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Self::with_init(store, name, fan_in, fan_out, Init::Zeros)
    }

    pub fn with_init(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, init: Init) -> Result<Self> {
        let weight = store.get(&format!("{name}.weight"), &[fan_out, fan_in], init)?;
        let bias = store.get(&format!("{name}.bias"), &[fan_out], Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(matmul_last(x, &self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// `x @ w` over the last axis of `x`, with the leading axes folded into one
/// 2-D product (a broadcast matmul would copy `w` once per batch element).
pub fn matmul_last(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let dims = x.dims().to_vec();
    let last = *dims.last().ok_or_else(|| invalid("matmul of a scalar"))?;
    let rows = x.elem_count() / last.max(1);
    let y = x.reshape((rows, last))?.matmul(w)?;
    let mut out = dims;
    *out.last_mut().expect("non-empty") = w.dim(1)?;
    Ok(y.reshape(out)?)
}

/// Layer norm over the last axis with no learned affine.
pub fn layer_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?)
}

/// Softmax over the last axis; the stabilizing max is treated as a constant.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

/// `x * (1 + scale) + shift` with per-example `(B, 1, H)` modulation.
pub fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_mul(&(scale + 1.0)?)?.broadcast_add(shift)?)
}

/// Inverted dropout with a mask drawn from an explicit RNG stream.
pub fn dropout(x: &Tensor, p: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.elem_count()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

/// Global multi-head self-attention over `(B, K, H)`.
#[derive(Debug, Clone)]
pub struct Attention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, heads: usize) -> Result<Self> {
        if heads == 0 || hidden % heads != 0 {
            return Err(invalid(format!("hidden {hidden} not divisible by {heads} heads")));
        }
        Ok(Self {
            qkv: Linear::new(store, &format!("{name}.qkv"), hidden, 3 * hidden)?,
            proj: Linear::new(store, &format!("{name}.proj"), hidden, hidden)?,
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, k, h) = x.dims3()?;
        let dh = h / self.heads;
        let qkv = self.qkv.forward(x)?.reshape((b, k, 3, self.heads, dh))?.permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let kk = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&kk.t()?.contiguous()?)? / (dh as f64).sqrt())?;
        let att = softmax_last(&scores)?;
        let out = att.matmul(&v)?.transpose(1, 2)?.reshape((b, k, h))?;
        self.proj.forward(&out)
    }
}

/// Two-layer perceptron with a tanh-approximated GELU.
#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

/// Convolution along the token axis of a `(B, K, H)` sequence.
#[derive(Debug, Clone)]
pub struct SeqConv {
    kernel: Tensor,
    bias: Tensor,
    stride: usize,
}

impl SeqConv {
    /// Kernel-3 convolution with padding 1; `stride` 1 or 2.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, stride: usize, init: Init) -> Result<Self> {
        let kernel = store.get(&format!("{name}.weight"), &[channels, channels, 3], init)?;
        let bias = store.get(&format!("{name}.bias"), &[channels], Init::Zeros)?;
        Ok(Self { kernel, bias, stride })
    }

    /// Written as a sum of three shifted matmuls over a zero-padded copy, so
    /// the backward pass only involves slicing and matrix products.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, len, ch) = x.dims3()?;
        let zero = Tensor::zeros((b, 1, ch), x.dtype(), x.device())?;
        let padded = Tensor::cat(&[&zero, x, &zero], 1)?;
        let out_len = (len - 1) / self.stride + 1;
        let mut acc: Option<Tensor> = None;
        for k in 0..3 {
            let idx: Vec<u32> = (0..out_len).map(|j| (j * self.stride + k) as u32).collect();
            let idx = Tensor::from_vec(idx, out_len, x.device())?;
            let taps = padded.index_select(&idx, 1)?;
            let w = self.kernel.narrow(2, k, 1)?.squeeze(2)?;
            let y = matmul_last(&taps, &w.t()?)?;
            acc = Some(match acc {
                Some(a) => (a + y)?,
                None => y,
            });
        }
        Ok(acc.expect("three taps").broadcast_add(&self.bias)?)
    }
}

/// `(2L, L)` linear interpolation matrix for a ×2 upsample, half-pixel
/// centers with edge clamping.
pub fn upsample_matrix(len: usize) -> Vec<f64> {
    let out = 2 * len;
    let mut m = vec![0.0; out * len];
    for j in 0..out {
        let src = ((j as f64 + 0.5) / 2.0 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        let w = src - i0 as f64;
        m[j * len + i0] += 1.0 - w;
        m[j * len + i1] += w;
    }
    m
}

/// Halves the token axis with a stride-2 convolution.
#[derive(Debug, Clone)]
pub struct Downsample {
    conv: SeqConv,
}

impl Downsample {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize) -> Result<Self> {
        let init = Init::Xavier { fan_in: 3 * hidden, fan_out: 3 * hidden };
        Ok(Self { conv: SeqConv::new(store, name, hidden, 2, init)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let k = x.dim(1)?;
        if k % 2 != 0 {
            return Err(invalid(format!("cannot downsample odd sequence length {k}")));
        }
        self.conv.forward(x)
    }
}

/// Doubles the token axis: linear interpolation, then a stride-1 convolution.
#[derive(Debug, Clone)]
pub struct Upsample {
    conv: SeqConv,
}

impl Upsample {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize) -> Result<Self> {
        let init = Init::Xavier { fan_in: 3 * hidden, fan_out: 3 * hidden };
        Ok(Self { conv: SeqConv::new(store, name, hidden, 1, init)? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let len = x.dim(1)?;
        let m = Tensor::from_vec(upsample_matrix(len), (2 * len, len), x.device())?.to_dtype(x.dtype())?;
        let up = m.broadcast_left(x.dim(0)?)?.contiguous()?.matmul(&x.contiguous()?)?;
        self.conv.forward(&up)
    }
}

/// Sine-cosine features of a scalar position: `[sin(p w_i)..., cos(p w_i)...]`
/// with `w_i = 10000^(-i / (dim/2))`.
pub fn sincos_1d(pos: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = 1.0 / 10000f64.powf(i as f64 / half as f64);
        out[i] = (pos * w).sin();
        out[half + i] = (pos * w).cos();
    }
    out
}

pub(crate) fn tensor_from_f64(values: Vec<f64>, shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, shape, &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

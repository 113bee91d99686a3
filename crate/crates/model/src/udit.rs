//! U-shaped diffusion transformer over the flattened circuit canvas.
//!
//! Five stages of adaLN-Zero transformer blocks run at sequence lengths
//! `K, K/2, K/4, K/2, K`. Each encoder/decoder pair is joined by a residual
//! unit `out = f_u(up(f_m(down(h)) - down(h)) + h)` with `h = f_d(x)`, nested
//! twice around the middle stage.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{layer_norm, modulate, sincos_1d, tensor_from_f64, Attention, Downsample, Linear, Mlp, Upsample};
use crate::params::{Init, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UDiTConfig {
    /// Canvas rows (max qubits).
    pub qubits: usize,
    /// Canvas columns (max gates).
    pub max_gates: usize,
    /// Per-cell feature dimension (embedding table width).
    pub token_dim: usize,
    pub hidden: usize,
    pub cond_dim: usize,
    pub depths: [usize; 5],
    pub heads: [usize; 5],
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: f64,
    #[serde(default = "yes")]
    pub residual_connections: bool,
    /// When false the decoder mirrors the encoder depths.
    #[serde(default = "yes")]
    pub asymmetric: bool,
}

fn default_mlp_ratio() -> f64 {
    4.0
}

fn yes() -> bool {
    true
}

impl UDiTConfig {
    /// Default decoder-heavy layout at a given canvas size and width.
    pub fn new(qubits: usize, max_gates: usize, token_dim: usize, hidden: usize) -> Self {
        Self {
            qubits,
            max_gates,
            token_dim,
            hidden,
            cond_dim: hidden,
            depths: [2, 2, 4, 3, 3],
            heads: [6, 6, 3, 6, 6],
            mlp_ratio: 4.0,
            residual_connections: true,
            asymmetric: true,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.qubits * self.max_gates
    }

    /// Blocks per stage after applying the `asymmetric` flag.
    pub fn stage_depths(&self) -> [usize; 5] {
        let d = self.depths;
        if self.asymmetric {
            d
        } else {
            [d[0], d[1], d[2], d[1], d[0]]
        }
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.hidden as f64 * self.mlp_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.qubits == 0 || self.max_gates == 0 || self.token_dim == 0 || self.cond_dim == 0 {
            return Err(invalid("udit: qubits, max_gates, token_dim and cond_dim must be positive"));
        }
        if self.seq_len() % 4 != 0 {
            return Err(invalid(format!(
                "udit: sequence length {} (qubits x max_gates) must be divisible by 4",
                self.seq_len()
            )));
        }
        if self.hidden == 0 || self.hidden % 4 != 0 {
            return Err(invalid(format!("udit.hidden {} must be a positive multiple of 4", self.hidden)));
        }
        for (i, &h) in self.heads.iter().enumerate() {
            if h == 0 || self.hidden % h != 0 {
                return Err(invalid(format!("udit.heads[{i}] = {h} does not divide hidden {}", self.hidden)));
            }
        }
        if self.stage_depths().iter().sum::<usize>() < 5 {
            return Err(invalid("udit.depths must sum to at least 5"));
        }
        if !(self.mlp_ratio > 0.0) {
            return Err(invalid("udit.mlp_ratio must be positive"));
        }
        Ok(())
    }
}

/// Fixed `K x hidden` table, row `t * Q + q`: the first half of the channels
/// encodes the qubit index, the second half the time step.
pub fn positional_embedding(qubits: usize, max_gates: usize, hidden: usize) -> Result<Vec<f64>> {
    if hidden % 4 != 0 {
        return Err(invalid(format!("positional embedding width {hidden} must be divisible by 4")));
    }
    let half = hidden / 2;
    let mut out = Vec::with_capacity(qubits * max_gates * hidden);
    for t in 0..max_gates {
        for q in 0..qubits {
            out.extend(sincos_1d(q as f64, half));
            out.extend(sincos_1d(t as f64, half));
        }
    }
    Ok(out)
}

/// Transformer block with adaLN-Zero modulation.
#[derive(Debug, Clone)]
pub struct DitBlock {
    attn: Attention,
    mlp: Mlp,
    ada: Linear,
}

impl DitBlock {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, cond_dim: usize, heads: usize, mlp_hidden: usize) -> Result<Self> {
        Ok(Self {
            attn: Attention::new(store, &format!("{name}.attn"), hidden, heads)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), hidden, mlp_hidden)?,
            ada: Linear::zeroed(store, &format!("{name}.ada"), cond_dim, 6 * hidden)?,
        })
    }

    /// `x`: `(B, K, H)`; `c_act`: already-activated condition `(B, C)`.
    pub fn forward(&self, x: &Tensor, c_act: &Tensor) -> Result<Tensor> {
        let m = self.ada.forward(c_act)?.unsqueeze(1)?.chunk(6, 2)?;
        let (shift1, scale1, gate1, shift2, scale2, gate2) = (&m[0], &m[1], &m[2], &m[3], &m[4], &m[5]);
        let a = self.attn.forward(&modulate(&layer_norm(x)?, shift1, scale1)?)?;
        let y = (x + a.broadcast_mul(gate1)?)?;
        let f = self.mlp.forward(&modulate(&layer_norm(&y)?, shift2, scale2)?)?;
        Ok((&y + f.broadcast_mul(gate2)?)?)
    }
}

#[derive(Debug, Clone)]
struct FinalLayer {
    ada: Linear,
    out: Linear,
}

impl FinalLayer {
    fn forward(&self, x: &Tensor, c_act: &Tensor) -> Result<Tensor> {
        let m = self.ada.forward(c_act)?.unsqueeze(1)?.chunk(2, 2)?;
        self.out.forward(&modulate(&layer_norm(x)?, &m[0], &m[1])?)
    }
}

#[derive(Debug, Clone)]
pub struct UDiT {
    cfg: UDiTConfig,
    patch: Linear,
    pos: Tensor,
    stages: Vec<Vec<DitBlock>>,
    down: [Downsample; 2],
    up: [Upsample; 2],
    last: FinalLayer,
}

impl UDiT {
    pub fn new(store: &mut ParamStore, cfg: &UDiTConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let depths = cfg.stage_depths();
        let mut stages = Vec::with_capacity(5);
        for (s, &depth) in depths.iter().enumerate() {
            let blocks = (0..depth)
                .map(|i| DitBlock::new(store, &format!("stage{s}.block{i}"), h, cfg.cond_dim, cfg.heads[s], cfg.mlp_hidden()))
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
        }
        let pos = tensor_from_f64(positional_embedding(cfg.qubits, cfg.max_gates, h)?, &[cfg.seq_len(), h], store.dtype())?;
        Ok(Self {
            cfg: cfg.clone(),
            patch: Linear::with_init(store, "patch", cfg.token_dim, h, Init::Xavier { fan_in: cfg.token_dim, fan_out: h })?,
            pos,
            stages,
            down: [Downsample::new(store, "down0", h)?, Downsample::new(store, "down1", h)?],
            up: [Upsample::new(store, "up0", h)?, Upsample::new(store, "up1", h)?],
            last: FinalLayer {
                ada: Linear::zeroed(store, "final.ada", cfg.cond_dim, 2 * h)?,
                out: Linear::zeroed(store, "final.out", h, cfg.token_dim)?,
            },
        })
    }

    pub fn config(&self) -> &UDiTConfig {
        &self.cfg
    }

    pub fn dtype(&self) -> DType {
        self.pos.dtype()
    }

    /// `(B, Q, T, d)` -> `(B, K, H)`; token `t * Q + q` holds cell `(q, t)`.
    pub fn patchify(&self, x: &Tensor) -> Result<Tensor> {
        let (b, q, t, d) = x.dims4()?;
        let c = &self.cfg;
        if (q, t, d) != (c.qubits, c.max_gates, c.token_dim) {
            return Err(invalid(format!(
                "input shape ({q}, {t}, {d}) does not match model canvas ({}, {}, {})",
                c.qubits, c.max_gates, c.token_dim
            )));
        }
        let tokens = x.permute((0, 2, 1, 3))?.contiguous()?.reshape((b, q * t, d))?;
        Ok(self.patch.forward(&tokens)?.broadcast_add(&self.pos)?)
    }

    /// `(B, K, d)` -> `(B, Q, T, d)`, inverse of the flattening in [`Self::patchify`].
    pub fn unpatchify(&self, tokens: &Tensor) -> Result<Tensor> {
        let (b, _, d) = tokens.dims3()?;
        Ok(tokens.reshape((b, self.cfg.max_gates, self.cfg.qubits, d))?.permute((0, 2, 1, 3))?.contiguous()?)
    }

    pub fn stage(&self, s: usize, x: &Tensor, c_act: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &self.stages[s] {
            h = block.forward(&h, c_act)?;
        }
        Ok(h)
    }

    pub fn block(&self, s: usize, i: usize) -> &DitBlock {
        &self.stages[s][i]
    }

    pub fn downsample(&self, level: usize, x: &Tensor) -> Result<Tensor> {
        self.down[level].forward(x)
    }

    pub fn upsample(&self, level: usize, x: &Tensor) -> Result<Tensor> {
        self.up[level].forward(x)
    }

    /// Output head: `(B, K, H)` -> `(B, K, d)`.
    pub fn head(&self, x: &Tensor, c_act: &Tensor) -> Result<Tensor> {
        self.last.forward(x, c_act)
    }

    /// Residual unit around an inner map at the next level down.
    pub fn residual_unit(
        &self,
        level: usize,
        h: &Tensor,
        inner: impl FnOnce(&Tensor) -> Result<Tensor>,
    ) -> Result<Tensor> {
        let d = self.downsample(level, h)?;
        let m = inner(&d)?;
        if self.cfg.residual_connections {
            Ok((self.upsample(level, &(m - &d)?)? + h)?)
        } else {
            self.upsample(level, &m)
        }
    }

    /// Stage stack on token sequences: `(B, K, H)` -> `(B, K, H)`.
    pub fn forward_tokens(&self, x: &Tensor, c_act: &Tensor) -> Result<Tensor> {
        let h1 = self.stage(0, x, c_act)?;
        let z = self.residual_unit(0, &h1, |d1| {
            let h2 = self.stage(1, d1, c_act)?;
            let z2 = self.residual_unit(1, &h2, |d2| self.stage(2, d2, c_act))?;
            self.stage(3, &z2, c_act)
        })?;
        self.stage(4, &z, c_act)
    }

    /// Noise prediction for `x` `(B, Q, T, d)` under condition vectors `c` `(B, C)`.
    pub fn forward(&self, x: &Tensor, c: &Tensor) -> Result<Tensor> {
        let (b, ..) = x.dims4()?;
        if c.dims() != [b, self.cfg.cond_dim] {
            return Err(invalid(format!("condition shape {:?} != ({b}, {})", c.dims(), self.cfg.cond_dim)));
        }
        let c_act = c.silu()?;
        let tokens = self.forward_tokens(&self.patchify(x)?, &c_act)?;
        let y = self.head(&tokens, &c_act)?;
        let out = self.unpatchify(&y)?;
        Ok(out)
    }
}

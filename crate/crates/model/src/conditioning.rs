//! Condition vectors: diffusion timestep, class label (with a learned null
//! row for guidance), and an optional encoding of a target unitary.

use candle_core::{DType, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uditqc_core::UnitaryMatrix;

use crate::error::{invalid, Result};
use crate::nn::{dropout, layer_norm, matmul_last, sincos_1d, tensor_from_f64, Attention, Linear, Mlp};
use crate::params::{Init, ParamStore};

/// Width of the sinusoidal timestep features fed to the timestep MLP.
pub const TIMESTEP_FEATURES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UEncConfig {
    pub qubits: usize,
    /// Channel width at each scale; one attention block and one 2x2
    /// downsample per entry.
    pub channels: Vec<usize>,
    #[serde(default = "default_uenc_heads")]
    pub heads: usize,
    #[serde(default = "default_out_channels")]
    pub out_channels: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_uenc_heads() -> usize {
    4
}

fn default_out_channels() -> usize {
    8
}

fn default_dropout() -> f64 {
    0.1
}

impl UEncConfig {
    /// Downsamples all the way to a 2x2 grid: 32 channels at the first
    /// scale, 64 afterwards.
    pub fn for_qubits(qubits: usize) -> Self {
        let scales = qubits.saturating_sub(1).max(1);
        let channels = (0..scales).map(|i| if i == 0 { 32 } else { 64 }).collect();
        Self { qubits, channels, heads: 4, out_channels: 8, dropout: 0.1 }
    }

    pub fn side(&self) -> usize {
        1 << self.qubits
    }

    pub fn final_side(&self) -> usize {
        self.side() >> self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.qubits < 2 || self.qubits > 10 {
            return Err(invalid(format!("uenc.qubits {} outside 2..=10", self.qubits)));
        }
        if self.channels.is_empty() || self.channels.len() > self.qubits - 1 {
            return Err(invalid(format!(
                "uenc.channels: {} scales cannot halve a {}x{} matrix down to at least 2x2",
                self.channels.len(),
                self.side(),
                self.side()
            )));
        }
        for &c in &self.channels {
            if c == 0 || c % 4 != 0 || c % self.heads != 0 {
                return Err(invalid(format!("uenc.channels entry {c} must be a multiple of 4 and of heads {}", self.heads)));
            }
        }
        if self.out_channels == 0 || !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("uenc.out_channels must be positive and uenc.dropout in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningConfig {
    pub num_classes: usize,
    #[serde(default = "default_dropout")]
    pub label_dropout: f64,
    /// Number of diffusion steps; timesteps must lie in `0..timesteps`.
    pub timesteps: usize,
    #[serde(default)]
    pub unitary: Option<UEncConfig>,
}

impl ConditioningConfig {
    pub fn null_label(&self) -> usize {
        self.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(invalid("conditioning.num_classes must be positive"));
        }
        if !(0.0..1.0).contains(&self.label_dropout) {
            return Err(invalid("conditioning.label_dropout must lie in [0, 1)"));
        }
        if self.timesteps < 2 {
            return Err(invalid("conditioning.timesteps must be at least 2"));
        }
        if let Some(u) = &self.unitary {
            u.validate()?;
        }
        Ok(())
    }
}

/// Per-example conditioning request. The guidance-free ("null") condition
/// is the same structure with the null label and every unitary dropped.
#[derive(Debug, Clone)]
pub struct Condition {
    pub labels: Vec<usize>,
    /// `(B, 2, 2^q, 2^q)` real/imaginary channels.
    pub unitaries: Option<Tensor>,
    /// Examples whose unitary embedding is replaced by zeros.
    pub unitary_dropped: Vec<bool>,
}

impl Condition {
    pub fn labels(labels: Vec<usize>) -> Self {
        let n = labels.len();
        Self { labels, unitaries: None, unitary_dropped: vec![false; n] }
    }

    pub fn with_unitaries(labels: Vec<usize>, unitaries: Tensor) -> Self {
        let n = labels.len();
        Self { labels, unitaries: Some(unitaries), unitary_dropped: vec![false; n] }
    }

    pub fn batch(&self) -> usize {
        self.labels.len()
    }

    /// Same batch and tensors, every example switched to the null condition.
    pub fn null(&self, null_label: usize) -> Self {
        Self {
            labels: vec![null_label; self.labels.len()],
            unitaries: self.unitaries.clone(),
            unitary_dropped: vec![true; self.labels.len()],
        }
    }

    pub fn is_null(&self, null_label: usize) -> bool {
        self.labels.iter().all(|&l| l == null_label) && (self.unitaries.is_none() || self.unitary_dropped.iter().all(|&d| d))
    }

    /// Rows `idx` of this condition.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let unitaries = match &self.unitaries {
            Some(u) => {
                let ids = Tensor::from_vec(idx.iter().map(|&i| i as u32).collect::<Vec<_>>(), idx.len(), u.device())?;
                Some(u.index_select(&ids, 0)?)
            }
            None => None,
        };
        Ok(Self {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            unitaries,
            unitary_dropped: idx.iter().map(|&i| self.unitary_dropped[i]).collect(),
        })
    }
}

/// `(B, 2, S, S)` tensor of real and imaginary parts.
pub fn unitary_tensor(us: &[UnitaryMatrix], dtype: DType) -> Result<Tensor> {
    let side = us.first().map(|u| u.dim()).ok_or_else(|| invalid("no unitaries given"))?;
    let mut vals = Vec::with_capacity(us.len() * 2 * side * side);
    for u in us {
        if u.dim() != side {
            return Err(invalid(format!("unitary side {} != {side}", u.dim())));
        }
        vals.extend(u.entries().iter().map(|z| z.re));
        vals.extend(u.entries().iter().map(|z| z.im));
    }
    tensor_from_f64(vals, &[us.len(), 2, side, side], dtype)
}

/// Sinusoidal features of integer timesteps, `(B, TIMESTEP_FEATURES)`.
pub fn timestep_features(ts: &[usize], dtype: DType) -> Result<Tensor> {
    let vals: Vec<f64> = ts.iter().flat_map(|&t| sincos_1d(t as f64, TIMESTEP_FEATURES)).collect();
    tensor_from_f64(vals, &[ts.len(), TIMESTEP_FEATURES], dtype)
}

#[derive(Debug, Clone)]
pub struct TimestepEmbedder {
    fc1: Linear,
    fc2: Linear,
    timesteps: usize,
}

impl TimestepEmbedder {
    pub fn new(store: &mut ParamStore, name: &str, cond_dim: usize, timesteps: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::with_init(store, &format!("{name}.fc1"), TIMESTEP_FEATURES, cond_dim, Init::Normal(0.02))?,
            fc2: Linear::with_init(store, &format!("{name}.fc2"), cond_dim, cond_dim, Init::Normal(0.02))?,
            timesteps,
        })
    }

    pub fn forward(&self, ts: &[usize], dtype: DType) -> Result<Tensor> {
        if let Some(&t) = ts.iter().find(|&&t| t >= self.timesteps) {
            return Err(invalid(format!("timestep {t} outside 0..{}", self.timesteps)));
        }
        let f = timestep_features(ts, dtype)?;
        self.fc2.forward(&self.fc1.forward(&f)?.silu()?)
    }
}

/// Learned class embeddings plus one trailing null row.
#[derive(Debug, Clone)]
pub struct LabelTable {
    rows: Tensor,
    num_classes: usize,
    dropout_p: f64,
}

impl LabelTable {
    pub fn new(store: &mut ParamStore, name: &str, num_classes: usize, cond_dim: usize, dropout_p: f64) -> Result<Self> {
        Ok(Self {
            rows: store.get(&format!("{name}.table"), &[num_classes + 1, cond_dim], Init::Normal(0.02))?,
            num_classes,
            dropout_p,
        })
    }

    pub fn null_index(&self) -> usize {
        self.num_classes
    }

    /// Label actually used for one example: during training it is replaced by
    /// the null index with probability `dropout_p`.
    pub fn select(&self, label: usize, training: bool, rng: &mut ChaCha8Rng) -> Result<usize> {
        if label > self.num_classes {
            return Err(invalid(format!("label {label} outside 0..={}", self.num_classes)));
        }
        if training && self.dropout_p > 0.0 && rng.random::<f64>() < self.dropout_p {
            return Ok(self.null_index());
        }
        Ok(label)
    }

    pub fn embed(&self, labels: &[usize]) -> Result<Tensor> {
        if let Some(&l) = labels.iter().find(|&&l| l > self.num_classes) {
            return Err(invalid(format!("label {l} outside 0..={}", self.num_classes)));
        }
        let ids = Tensor::from_vec(labels.iter().map(|&l| l as u32).collect::<Vec<_>>(), labels.len(), self.rows.device())?;
        Ok(self.rows.index_select(&ids, 0)?)
    }
}

#[derive(Debug, Clone)]
struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    padding: usize,
}

impl Conv2d {
    /// Stride-1 convolution with `k x k` kernel.
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, padding: usize) -> Result<Self> {
        let init = Init::Xavier { fan_in: cin * k * k, fan_out: cout * k * k };
        Ok(Self {
            weight: store.get(&format!("{name}.weight"), &[cout, cin, k, k], init)?,
            bias: store.get(&format!("{name}.bias"), &[cout], Init::Zeros)?,
            padding,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, 1, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

/// Non-overlapping 2x2, stride-2 convolution written as a patch matmul.
#[derive(Debug, Clone)]
struct PatchDown {
    weight: Tensor,
    bias: Tensor,
}

impl PatchDown {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let init = Init::Xavier { fan_in: cin * 4, fan_out: cout * 4 };
        Ok(Self {
            weight: store.get(&format!("{name}.weight"), &[cout, cin, 2, 2], init)?,
            bias: store.get(&format!("{name}.bias"), &[cout], Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let (h2, w2) = (h / 2, w / 2);
        let cout = self.weight.dim(0)?;
        let patches = x
            .reshape((b, c, h2, 2, w2, 2))?
            .permute((0, 2, 4, 1, 3, 5))?
            .contiguous()?
            .reshape((b, h2 * w2, c * 4))?;
        let y = matmul_last(&patches, &self.weight.reshape((cout, c * 4))?.t()?)?.broadcast_add(&self.bias)?;
        Ok(y.transpose(1, 2)?.reshape((b, cout, h2, w2))?)
    }
}

#[derive(Debug, Clone)]
struct UEncScale {
    attn: Attention,
    mlp: Mlp,
    down: PatchDown,
}

/// Fixed 2-D sine-cosine table `(C, S, S)`: half the channels encode the row,
/// half the column.
pub fn positional_encoding_2d(channels: usize, side: usize) -> Vec<f64> {
    let half = channels / 2;
    let mut out = vec![0.0; channels * side * side];
    for r in 0..side {
        for c in 0..side {
            let feats: Vec<f64> = sincos_1d(r as f64, half).into_iter().chain(sincos_1d(c as f64, half)).collect();
            for (ch, v) in feats.into_iter().enumerate() {
                out[(ch * side + r) * side + c] = v;
            }
        }
    }
    out
}

/// Convolutional/attention encoder of a `2^q x 2^q` complex matrix.
#[derive(Debug, Clone)]
pub struct UnitaryEncoder {
    cfg: UEncConfig,
    stem: Conv2d,
    pos: Tensor,
    scales: Vec<UEncScale>,
    head: Conv2d,
    proj: Linear,
}

impl UnitaryEncoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &UEncConfig, cond_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let side = cfg.side();
        let c0 = cfg.channels[0];
        let mut scales = Vec::new();
        for (i, &c) in cfg.channels.iter().enumerate() {
            let next = *cfg.channels.get(i + 1).unwrap_or(&c);
            scales.push(UEncScale {
                attn: Attention::new(store, &format!("{name}.scale{i}.attn"), c, cfg.heads)?,
                mlp: Mlp::new(store, &format!("{name}.scale{i}.mlp"), c, 2 * c)?,
                down: PatchDown::new(store, &format!("{name}.scale{i}.down"), c, next)?,
            });
        }
        let last = *cfg.channels.last().unwrap();
        let fs = cfg.final_side();
        Ok(Self {
            cfg: cfg.clone(),
            stem: Conv2d::new(store, &format!("{name}.stem"), 2, c0, 3, 1)?,
            pos: tensor_from_f64(positional_encoding_2d(c0, side), &[1, c0, side, side], store.dtype())?,
            scales,
            head: Conv2d::new(store, &format!("{name}.head"), last, cfg.out_channels, 1, 0)?,
            proj: Linear::new(store, &format!("{name}.proj"), cfg.out_channels * fs * fs, cond_dim)?,
        })
    }

    /// `u`: `(B, 2, S, S)`. Dropout is active only when `rng` is given.
    pub fn forward(&self, u: &Tensor, mut rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let (b, ch, s1, s2) = u.dims4()?;
        let side = self.cfg.side();
        if ch != 2 || s1 != side || s2 != side {
            return Err(invalid(format!("unitary input ({ch}, {s1}, {s2}) does not match (2, {side}, {side})")));
        }
        let p = self.cfg.dropout;
        let mut drop = |x: &Tensor| -> Result<Tensor> {
            match rng.as_deref_mut() {
                Some(r) => dropout(x, p, r),
                None => Ok(x.clone()),
            }
        };
        let mut x = self.stem.forward(u)?.broadcast_add(&self.pos)?;
        x = drop(&x)?;
        for scale in &self.scales {
            let (_, c, h, w) = x.dims4()?;
            let tokens = x.flatten_from(2)?.transpose(1, 2)?.contiguous()?;
            let tokens = (&tokens + drop(&scale.attn.forward(&layer_norm(&tokens)?)?)?)?;
            let tokens = (&tokens + drop(&scale.mlp.forward(&layer_norm(&tokens)?)?)?)?;
            x = tokens.transpose(1, 2)?.reshape((b, c, h, w))?;
            x = scale.down.forward(&x)?;
        }
        let flat = self.head.forward(&x)?.flatten_from(1)?;
        self.proj.forward(&drop(&flat)?)
    }
}

/// `t + label`, or `fuse([t + label, unitary])` when a unitary embedding is present.
pub fn combine(t_embed: &Tensor, label_embed: &Tensor, unitary: Option<(&Tensor, &Linear)>) -> Result<Tensor> {
    if t_embed.dims() != label_embed.dims() {
        return Err(invalid(format!("timestep embedding {:?} vs label embedding {:?}", t_embed.dims(), label_embed.dims())));
    }
    let base = (t_embed + label_embed)?;
    match unitary {
        None => Ok(base),
        Some((u, fuse)) => {
            if u.dims() != base.dims() {
                return Err(invalid(format!("unitary embedding {:?} vs condition {:?}", u.dims(), base.dims())));
            }
            fuse.forward(&Tensor::cat(&[&base, u], 1)?)
        }
    }
}

/// All conditioning pathways of a denoiser.
#[derive(Debug, Clone)]
pub struct Conditioner {
    cfg: ConditioningConfig,
    time: TimestepEmbedder,
    labels: LabelTable,
    unitary: Option<(UnitaryEncoder, Linear)>,
}

impl Conditioner {
    pub fn new(store: &mut ParamStore, cfg: &ConditioningConfig, cond_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let unitary = match &cfg.unitary {
            Some(u) => Some((
                UnitaryEncoder::new(store, "cond.uenc", u, cond_dim)?,
                Linear::new(store, "cond.fuse", 2 * cond_dim, cond_dim)?,
            )),
            None => None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            time: TimestepEmbedder::new(store, "cond.time", cond_dim, cfg.timesteps)?,
            labels: LabelTable::new(store, "cond.label", cfg.num_classes, cond_dim, cfg.label_dropout)?,
            unitary,
        })
    }

    pub fn config(&self) -> &ConditioningConfig {
        &self.cfg
    }

    pub fn label_table(&self) -> &LabelTable {
        &self.labels
    }

    pub fn timestep_embedder(&self) -> &TimestepEmbedder {
        &self.time
    }

    pub fn unitary_encoder(&self) -> Option<&UnitaryEncoder> {
        self.unitary.as_ref().map(|(u, _)| u)
    }

    /// Condition vectors `(B, cond_dim)`. `rng` switches the unitary encoder
    /// into training mode; label dropout is applied by the caller through
    /// [`LabelTable::select`] so it is visible in the [`Condition`].
    pub fn forward(&self, ts: &[usize], cond: &Condition, dtype: DType, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let b = cond.batch();
        if ts.len() != b || cond.unitary_dropped.len() != b {
            return Err(invalid(format!("batch mismatch: {} timesteps for {b} conditions", ts.len())));
        }
        let t = self.time.forward(ts, dtype)?;
        let l = self.labels.embed(&cond.labels)?;
        match (&self.unitary, &cond.unitaries) {
            (None, None) => combine(&t, &l, None),
            (Some((enc, fuse)), Some(u)) => {
                let keep: Vec<f64> = cond.unitary_dropped.iter().map(|&d| if d { 0.0 } else { 1.0 }).collect();
                let keep = tensor_from_f64(keep, &[b, 1], dtype)?;
                let emb = enc.forward(&u.to_dtype(dtype)?, rng)?.broadcast_mul(&keep)?;
                combine(&t, &l, Some((&emb, fuse)))
            }
            (Some(_), None) => Err(invalid("this model expects a target unitary for every example")),
            (None, Some(_)) => Err(invalid("this model takes no unitary condition")),
        }
    }
}

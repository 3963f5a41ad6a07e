//! Residual 1D encoder (ResNet-18 layout by default) on the autodiff tape.

use std::path::Path;

use dggn_tape::{BatchStats, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::moia::{Moia, MoiaConfig, PaddingMode};
use super::types::{Embedding, FeatureMap, NORM_EPS};
use crate::data::{stack, SignalSample};
use crate::error::{io_err, DggnError, Result};
use crate::params::{he_normal, Bound, NamedArray, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ClassSpecific,
    ClassAgnostic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub input_len: usize,
    /// Output channels of each stage; the last one is the embedding size.
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    /// MOIA after the second convolution of every block in the flagged stages.
    pub moia_stages: Vec<bool>,
    pub moia_padding: PaddingMode,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl EncoderConfig {
    /// ResNet-18 layout: widths 64..512, MOIA in the last two stages.
    pub fn resnet18(in_channels: usize, input_len: usize) -> Self {
        Self {
            in_channels,
            input_len,
            widths: vec![64, 128, 256, 512],
            blocks_per_stage: 2,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            moia_stages: vec![false, false, true, true],
            moia_padding: PaddingMode::Zeros,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    /// ResNet-18 layout with every width divided by 8.
    pub fn tiny(in_channels: usize, input_len: usize) -> Self {
        Self {
            widths: vec![8, 16, 32, 64],
            ..Self::resnet18(in_channels, input_len)
        }
    }

    pub fn without_moia(mut self) -> Self {
        self.moia_stages.iter_mut().for_each(|m| *m = false);
        self
    }

    pub fn embedding_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&0)
    }

    fn conv_len(len: usize, k: usize, s: usize, p: usize) -> Option<usize> {
        (len + 2 * p).checked_sub(k).map(|v| v / s + 1)
    }

    /// Temporal length of the final feature map.
    pub fn output_len(&self) -> Option<usize> {
        let mut l = Self::conv_len(self.input_len, self.stem_kernel, self.stem_stride, self.stem_kernel / 2)?;
        if self.stem_pool {
            l = Self::conv_len(l, 3, 2, 1)?;
        }
        for _ in 1..self.widths.len() {
            l = Self::conv_len(l, 3, 2, 1)?;
        }
        Some(l)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DggnError::Config(m.to_string()));
        if self.in_channels == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return bad("encoder needs input channels and non-zero stage widths");
        }
        if self.blocks_per_stage == 0 || self.stem_stride == 0 || self.stem_kernel % 2 == 0 {
            return bad("encoder needs >= 1 block per stage, stride >= 1 and an odd stem kernel");
        }
        if self.moia_stages.len() != self.widths.len() {
            return bad("moia_stages must have one flag per stage");
        }
        if !(self.bn_eps > 0.0 && (0.0..=1.0).contains(&self.bn_momentum)) {
            return bad("bn_eps must be positive and bn_momentum in [0, 1]");
        }
        match self.output_len() {
            Some(l) if l >= 1 => Ok(()),
            _ => bad("input too short for this encoder"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running averages updated afterwards.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Debug)]
struct Conv {
    w: usize,
    stride: usize,
    padding: usize,
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Debug)]
struct Block {
    conv1: Conv,
    bn1: Norm,
    conv2: Conv,
    bn2: Norm,
    moia: Option<Moia>,
    down: Option<(Conv, Norm)>,
}

#[derive(Clone, Debug)]
struct Layout {
    stem: Conv,
    stem_bn: Norm,
    blocks: Vec<Block>,
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// Final-stage feature map `[B, C, L']`.
    pub features: Var,
    /// Globally average-pooled features `[B, C]`.
    pub pooled: Var,
    /// L2-normalized pooled features `[B, C]`.
    pub embedding: Var,
}

/// Parameters, running statistics and freeze flag of one encoder branch.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    role: Role,
    frozen: bool,
    params: ParamSet,
    buffers: ParamSet,
    layout: Layout,
}

fn add_conv(params: &mut ParamSet, name: &str, c_out: usize, c_in: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) -> Conv {
    let w = params.add(format!("{name}.weight"), he_normal(&[c_out, c_in, k], c_in * k, rng));
    Conv {
        w,
        stride,
        padding: k / 2,
    }
}

fn add_norm(params: &mut ParamSet, buffers: &mut ParamSet, name: &str, c: usize) -> Norm {
    Norm {
        gamma: params.add(format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
        beta: params.add(format!("{name}.beta"), Tensor::zeros(&[c])),
        mean: buffers.add(format!("{name}.running_mean"), Tensor::zeros(&[c])),
        var: buffers.add(format!("{name}.running_var"), Tensor::full(&[c], 1.0)),
    }
}

impl Encoder {
    pub fn new(config: EncoderConfig, role: Role, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut buffers = ParamSet::new();
        let w0 = config.widths[0];
        let mut stem = add_conv(&mut params, "stem.conv", w0, config.in_channels, config.stem_kernel, config.stem_stride, &mut rng);
        stem.padding = config.stem_kernel / 2;
        let stem_bn = add_norm(&mut params, &mut buffers, "stem.bn", w0);
        let mut blocks = Vec::new();
        let mut c_in = w0;
        for (s, &w) in config.widths.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let name = format!("stage{s}.block{b}");
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let conv1 = add_conv(&mut params, &format!("{name}.conv1"), w, c_in, 3, stride, &mut rng);
                let bn1 = add_norm(&mut params, &mut buffers, &format!("{name}.bn1"), w);
                let conv2 = add_conv(&mut params, &format!("{name}.conv2"), w, w, 3, 1, &mut rng);
                let bn2 = add_norm(&mut params, &mut buffers, &format!("{name}.bn2"), w);
                let moia = if config.moia_stages[s] {
                    let mut cfg = MoiaConfig::for_channels(w);
                    cfg.padding = config.moia_padding;
                    Some(Moia::build(cfg, &format!("{name}.moia"), &mut params, &mut rng)?)
                } else {
                    None
                };
                let down = (stride != 1 || c_in != w).then(|| {
                    let conv = add_conv(&mut params, &format!("{name}.down.conv"), w, c_in, 1, stride, &mut rng);
                    let bn = add_norm(&mut params, &mut buffers, &format!("{name}.down.bn"), w);
                    (conv, bn)
                });
                blocks.push(Block {
                    conv1,
                    bn1,
                    conv2,
                    bn2,
                    moia,
                    down,
                });
                c_in = w;
            }
        }
        Ok(Self {
            config,
            role,
            frozen: false,
            params,
            buffers,
            layout: Layout { stem, stem_bn, blocks },
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable parameters; `None` once frozen.
    pub fn params_mut(&mut self) -> Option<&mut ParamSet> {
        (!self.frozen).then_some(&mut self.params)
    }

    pub fn buffers(&self) -> &ParamSet {
        &self.buffers
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    /// A frozen copy, used as teacher or anchor.
    pub fn frozen_copy(&self) -> Self {
        let mut c = self.clone();
        c.frozen = true;
        c
    }

    /// Binds parameters to `g`; frozen encoders bind as constants.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.params.bind(g, !self.frozen)
    }

    pub fn bind_const(&self, g: &mut Graph) -> Bound {
        self.params.bind(g, false)
    }

    fn conv(&self, g: &mut Graph, p: &Bound, x: Var, c: &Conv) -> Result<Var> {
        Ok(g.conv1d(x, p.var(c.w), None, c.stride, c.padding, 1)?)
    }

    fn norm(&self, g: &mut Graph, p: &Bound, x: Var, n: &Norm, mode: BnMode, stats: &mut Vec<BatchStats>) -> Result<Var> {
        match mode {
            BnMode::Train => {
                let (y, s) = g.batch_norm_train(x, p.var(n.gamma), p.var(n.beta), self.config.bn_eps)?;
                stats.push(s);
                Ok(y)
            }
            BnMode::Eval => Ok(g.batch_norm_eval(
                x,
                p.var(n.gamma),
                p.var(n.beta),
                self.buffers.get(n.mean).data(),
                self.buffers.get(n.var).data(),
                self.config.bn_eps,
            )?),
        }
    }

    /// Forward pass on a `[B, C, L]` input. In train mode the batch statistics of
    /// every norm layer are appended to `stats` in layer order.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, mode: BnMode, stats: &mut Vec<BatchStats>) -> Result<EncoderOutput> {
        match g.value(x).shape() {
            [_, c, l] if *c == self.config.in_channels && *l == self.config.input_len => {}
            s => {
                return Err(DggnError::Config(format!(
                    "encoder expects [B, {}, {}], got {s:?}",
                    self.config.in_channels, self.config.input_len
                )))
            }
        }
        let lay = &self.layout;
        let mut h = self.conv(g, p, x, &lay.stem)?;
        h = self.norm(g, p, h, &lay.stem_bn, mode, stats)?;
        h = g.relu(h);
        if self.config.stem_pool {
            h = g.max_pool1d(h, 3, 2, 1)?;
        }
        for b in &lay.blocks {
            let mut y = self.conv(g, p, h, &b.conv1)?;
            y = self.norm(g, p, y, &b.bn1, mode, stats)?;
            y = g.relu(y);
            y = self.conv(g, p, y, &b.conv2)?;
            y = self.norm(g, p, y, &b.bn2, mode, stats)?;
            if let Some(m) = &b.moia {
                y = m.forward(g, p, y)?;
            }
            let short = match &b.down {
                Some((c, n)) => {
                    let s = self.conv(g, p, h, c)?;
                    self.norm(g, p, s, n, mode, stats)?
                }
                None => h,
            };
            let sum = g.add(y, short)?;
            h = g.relu(sum);
        }
        let pooled = g.mean_last(h);
        let embedding = g.l2_normalize(pooled, NORM_EPS);
        Ok(EncoderOutput {
            features: h,
            pooled,
            embedding,
        })
    }

    /// Folds batch statistics from a train-mode pass into the running averages.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        if self.frozen {
            return Err(DggnError::State("cannot update a frozen encoder".into()));
        }
        let norms = self.norm_layers();
        if stats.len() != norms.len() {
            return Err(DggnError::Invariant(format!(
                "{} batch statistics for {} norm layers",
                stats.len(),
                norms.len()
            )));
        }
        let m = self.config.bn_momentum;
        for ((mean_slot, var_slot), s) in norms.into_iter().zip(stats) {
            let unbias = if s.count > 1 {
                s.count as f64 / (s.count - 1) as f64
            } else {
                1.0
            };
            for (r, v) in self.buffers.get_mut(mean_slot).data_mut().iter_mut().zip(&s.mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in self.buffers.get_mut(var_slot).data_mut().iter_mut().zip(&s.var) {
                *r = (1.0 - m) * *r + m * v * unbias;
            }
        }
        Ok(())
    }

    fn norm_layers(&self) -> Vec<(usize, usize)> {
        let lay = &self.layout;
        let mut v = vec![(lay.stem_bn.mean, lay.stem_bn.var)];
        for b in &lay.blocks {
            v.push((b.bn1.mean, b.bn1.var));
            v.push((b.bn2.mean, b.bn2.var));
            if let Some((_, n)) = &b.down {
                v.push((n.mean, n.var));
            }
        }
        v
    }

    /// Eval-mode embeddings and feature maps for many samples, in chunks.
    pub fn embed(&self, samples: &[&SignalSample], chunk: usize) -> Result<Tensor> {
        let d = self.config.embedding_dim();
        let mut out = Vec::with_capacity(samples.len() * d);
        for part in samples.chunks(chunk.max(1)) {
            let mut g = Graph::new();
            let p = self.bind_const(&mut g);
            let (shape, data) = stack(part)?;
            let x = g.constant(Tensor::new(shape, data)?);
            let o = self.forward(&mut g, &p, x, BnMode::Eval, &mut Vec::new())?;
            out.extend_from_slice(g.value(o.embedding).data());
        }
        Ok(Tensor::new(vec![samples.len(), d], out)?)
    }

    /// Eval-mode feature map and embedding of one sample.
    pub fn forward_sample(&self, sample: &SignalSample) -> Result<(FeatureMap, Embedding)> {
        let mut g = Graph::new();
        let p = self.bind_const(&mut g);
        let (shape, data) = stack(&[sample])?;
        let x = g.constant(Tensor::new(shape, data)?);
        let o = self.forward(&mut g, &p, x, BnMode::Eval, &mut Vec::new())?;
        let fm = FeatureMap::from_batched(g.value(o.features), 0)?;
        let pooled = g.value(o.pooled).row(0).to_vec();
        Ok((fm, Embedding::normalize(pooled)))
    }

    /// MOIA modules in block order, for inspection and tests.
    pub fn moia_modules(&self) -> impl Iterator<Item = &Moia> {
        self.layout.blocks.iter().filter_map(|b| b.moia.as_ref())
    }

    pub fn to_checkpoint(&self) -> EncoderCheckpoint {
        EncoderCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            role: self.role,
            frozen: self.frozen,
            config: self.config.clone(),
            params: self.params.to_arrays(),
            buffers: self.buffers.to_arrays(),
        }
    }

    pub fn from_checkpoint(ck: &EncoderCheckpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(DggnError::Config(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut e = Self::new(ck.config.clone(), ck.role, 0)?;
        e.params.load_arrays(&ck.params)?;
        e.buffers.load_arrays(&ck.buffers)?;
        e.frozen = ck.frozen;
        Ok(e)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

pub const CHECKPOINT_FORMAT: &str = "dggn-encoder";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub format: String,
    pub version: u32,
    pub role: Role,
    pub frozen: bool,
    pub config: EncoderConfig,
    pub params: Vec<NamedArray>,
    pub buffers: Vec<NamedArray>,
}

/// Gradient of a scalar built by `loss` w.r.t. every trainable parameter of
/// `encoder`, slot-aligned with [`Encoder::params`]. Frozen encoders yield `None`.
pub fn gradient_of<F>(encoder: &Encoder, loss: F) -> Result<Option<Vec<Tensor>>>
where
    F: FnOnce(&mut Graph, &Encoder, &Bound) -> Result<Var>,
{
    if encoder.is_frozen() {
        return Ok(None);
    }
    let mut g = Graph::new();
    let p = encoder.bind(&mut g);
    let root = loss(&mut g, encoder, &p)?;
    let grads = g.backward(root)?;
    Ok(Some(p.gradients(&grads)))
}

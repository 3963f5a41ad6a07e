//! Multi-order interaction aggregation: parallel dilated depthwise convolutions
//! fused by a pointwise convolution.

use dggn_tape::{Graph, Padding, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{DggnError, Result};
use crate::params::{he_normal, Bound, ParamSet};

pub const MOIA_KERNELS: [usize; 3] = [5, 5, 7];
pub const MOIA_DILATIONS: [usize; 3] = [1, 2, 3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    #[default]
    Zeros,
    Circular,
}

impl From<PaddingMode> for Padding {
    fn from(p: PaddingMode) -> Self {
        match p {
            PaddingMode::Zeros => Padding::Zeros,
            PaddingMode::Circular => Padding::Circular,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoiaConfig {
    /// `(low, mid, high)` channel counts.
    pub channel_split: (usize, usize, usize),
    pub kernels: [usize; 3],
    pub dilations: [usize; 3],
    pub padding: PaddingMode,
}

impl MoiaConfig {
    /// Default split `ceil(C/2) : floor(C/4) : rest`.
    pub fn for_channels(c: usize) -> Self {
        let low = c.div_ceil(2);
        let mid = c / 4;
        Self {
            channel_split: (low, mid, c - low - mid),
            kernels: MOIA_KERNELS,
            dilations: MOIA_DILATIONS,
            padding: PaddingMode::Zeros,
        }
    }

    pub fn channels(&self) -> usize {
        let (l, m, h) = self.channel_split;
        l + m + h
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.channels() != channels {
            return Err(DggnError::Config(format!(
                "channel split {:?} does not sum to {channels}",
                self.channel_split
            )));
        }
        if self.dilations != MOIA_DILATIONS {
            return Err(DggnError::Config(format!(
                "dilations must be {MOIA_DILATIONS:?}, got {:?}",
                self.dilations
            )));
        }
        if self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(DggnError::Config("kernel sizes must be odd to preserve length".into()));
        }
        Ok(())
    }
}

/// Parameter slots of one MOIA module inside a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Moia {
    pub cfg: MoiaConfig,
    dw0: (usize, usize),
    dw_mid: Option<(usize, usize)>,
    dw_high: Option<(usize, usize)>,
    pw: (usize, usize),
}

impl Moia {
    pub fn build(cfg: MoiaConfig, prefix: &str, params: &mut ParamSet, rng: &mut impl Rng) -> Result<Self> {
        let c = cfg.channels();
        cfg.validate(c)?;
        let (_, cm, ch) = cfg.channel_split;
        let mut dw = |name: &str, n: usize, k: usize| {
            let w = params.add(format!("{prefix}.{name}.weight"), he_normal(&[n, k], k, rng));
            let b = params.add(format!("{prefix}.{name}.bias"), Tensor::zeros(&[n]));
            (w, b)
        };
        let dw0 = dw("dw0", c, cfg.kernels[0]);
        let dw_mid = (cm > 0).then(|| dw("dw_mid", cm, cfg.kernels[1]));
        let dw_high = (ch > 0).then(|| dw("dw_high", ch, cfg.kernels[2]));
        let pw_w = params.add(format!("{prefix}.pw.weight"), he_normal(&[c, c, 1], c, rng));
        let pw_b = params.add(format!("{prefix}.pw.bias"), Tensor::zeros(&[c]));
        Ok(Self {
            cfg,
            dw0,
            dw_mid,
            dw_high,
            pw: (pw_w, pw_b),
        })
    }

    /// Slots of `(dw0, dw_mid, dw_high, pw)` as `(weight, bias)` pairs.
    pub fn slots(&self) -> [Option<(usize, usize)>; 4] {
        [Some(self.dw0), self.dw_mid, self.dw_high, Some(self.pw)]
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let c = self.cfg.channels();
        match g.value(x).shape() {
            [_, cx, _] if *cx == c => {}
            s => {
                return Err(DggnError::Config(format!(
                    "MOIA configured for {c} channels, input is {s:?}"
                )))
            }
        }
        let pad = self.cfg.padding.into();
        let same = |k: usize, d: usize| d * (k - 1) / 2;
        let [k0, km, kh] = self.cfg.kernels;
        let [d0, dm, dh] = self.cfg.dilations;
        let y = g.depthwise_conv1d(x, p.var(self.dw0.0), Some(p.var(self.dw0.1)), same(k0, d0), d0, pad)?;
        let (cl, cm, ch) = self.cfg.channel_split;
        let mut parts = Vec::with_capacity(3);
        if cl > 0 {
            parts.push(g.slice1(y, 0, cl)?);
        }
        if let Some((w, b)) = self.dw_mid {
            let xm = g.slice1(y, cl, cm)?;
            parts.push(g.depthwise_conv1d(xm, p.var(w), Some(p.var(b)), same(km, dm), dm, pad)?);
        }
        if let Some((w, b)) = self.dw_high {
            let xh = g.slice1(y, cl + cm, ch)?;
            parts.push(g.depthwise_conv1d(xh, p.var(w), Some(p.var(b)), same(kh, dh), dh, pad)?);
        }
        let cat = if parts.len() == 1 { parts[0] } else { g.concat1(&parts)? };
        Ok(g.conv1d(cat, p.var(self.pw.0), Some(p.var(self.pw.1)), 1, 0, 1)?)
    }

    /// Pre-concatenation output of the high-order path, `[B, C_h, L]`.
    pub fn high_path(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Option<Var>> {
        let Some((w, b)) = self.dw_high else { return Ok(None) };
        let pad = self.cfg.padding.into();
        let [k0, _, kh] = self.cfg.kernels;
        let [d0, _, dh] = self.cfg.dilations;
        let y = g.depthwise_conv1d(x, p.var(self.dw0.0), Some(p.var(self.dw0.1)), d0 * (k0 - 1) / 2, d0, pad)?;
        let (cl, cm, ch) = self.cfg.channel_split;
        let xh = g.slice1(y, cl + cm, ch)?;
        Ok(Some(g.depthwise_conv1d(xh, p.var(w), Some(p.var(b)), dh * (kh - 1) / 2, dh, pad)?))
    }
}

/// Standalone evaluation of one MOIA module on a single feature map.
pub fn moia_forward(x: &FeatureMap, moia: &Moia, params: &ParamSet) -> Result<FeatureMap> {
    moia.cfg.validate(x.channels())?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let xv = g.constant(x.batched());
    let y = moia.forward(&mut g, &bound, xv)?;
    FeatureMap::from_batched(g.value(y), 0)
}

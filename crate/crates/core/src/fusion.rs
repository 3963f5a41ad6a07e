//! Multi-semantic cross-attention: class-specific queries attend jointly to
//! class-specific and gradient-blocked class-agnostic keys and values.

use dggn_tape::{Gradients, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DggnError, Result};
use crate::params::{uniform_fan_in, Bound, ParamSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Scores divided by `d / h`.
    #[default]
    PaperLiteralDOverH,
    /// Scores divided by `sqrt(d / h)`.
    SqrtDOverH,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub scale_mode: ScaleMode,
    /// Skips both layer norms. Test hook.
    #[serde(default)]
    pub bypass_norm: bool,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

fn default_ln_eps() -> f64 {
    1e-5
}

impl AttentionConfig {
    pub fn new(d_model: usize) -> Self {
        Self {
            d_model,
            n_heads: 4,
            scale_mode: ScaleMode::PaperLiteralDOverH,
            bypass_norm: false,
            ln_eps: default_ln_eps(),
        }
    }

    pub fn scale(&self) -> f64 {
        let r = self.d_model as f64 / self.n_heads as f64;
        match self.scale_mode {
            ScaleMode::PaperLiteralDOverH => r,
            ScaleMode::SqrtDOverH => r.sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(DggnError::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

const LN_CS_GAMMA: usize = 0;
const LN_CS_BETA: usize = 1;
const LN_CA_GAMMA: usize = 2;
const LN_CA_BETA: usize = 3;
const W_Q: usize = 4;
const W_K_CS: usize = 5;
const W_V_CS: usize = 6;
const W_K_CA: usize = 7;
const W_V_CA: usize = 8;

#[derive(Clone, Debug)]
pub struct Msca {
    cfg: AttentionConfig,
    params: ParamSet,
}

#[derive(Clone, Copy, Debug)]
pub struct MscaOutput {
    /// Fused map `[B, C, L']`.
    pub z_m: Var,
    /// Attention node; weights via [`Graph::attention_weights`].
    pub attention: Var,
}

impl Msca {
    pub fn new(cfg: AttentionConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.add("ln_cs.gamma", Tensor::full(&[d], 1.0));
        params.add("ln_cs.beta", Tensor::zeros(&[d]));
        params.add("ln_ca.gamma", Tensor::full(&[d], 1.0));
        params.add("ln_ca.beta", Tensor::zeros(&[d]));
        for name in ["w_q", "w_k_cs", "w_v_cs", "w_k_ca", "w_v_ca"] {
            params.add(name, uniform_fan_in(&[d, d], d, &mut rng));
        }
        Ok(Self { cfg, params })
    }

    /// All projections set to the identity, layer norms at their defaults.
    pub fn identity(cfg: AttentionConfig) -> Result<Self> {
        let mut m = Self::new(cfg, 0)?;
        let d = m.cfg.d_model;
        for slot in W_Q..=W_V_CA {
            let t = m.params.get_mut(slot).data_mut();
            t.fill(0.0);
            for i in 0..d {
                t[i * d + i] = 1.0;
            }
        }
        Ok(m)
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.params.bind(g, trainable)
    }

    fn tokens(&self, g: &mut Graph, p: &Bound, f: Var, gamma: usize, beta: usize) -> Result<Var> {
        let t = g.transpose12(f)?;
        if self.cfg.bypass_norm {
            Ok(t)
        } else {
            Ok(g.layer_norm(t, p.var(gamma), p.var(beta), self.cfg.ln_eps)?)
        }
    }

    /// Fuses `f_cs` with `f_ca` (both `[B, C, L']`). `f_ca` is detached first, so
    /// no gradient can reach whatever produced it. With `f_ca = None` the
    /// class-agnostic block is removed and this is self-attention over `f_cs`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, f_cs: Var, f_ca: Option<Var>) -> Result<MscaOutput> {
        let shape = g.value(f_cs).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.cfg.d_model {
            return Err(DggnError::Domain(format!(
                "fusion expects [B, {}, L], got {shape:?}",
                self.cfg.d_model
            )));
        }
        let z_cs = self.tokens(g, p, f_cs, LN_CS_GAMMA, LN_CS_BETA)?;
        let q = g.linear(z_cs, p.var(W_Q), None)?;
        let mut k = g.linear(z_cs, p.var(W_K_CS), None)?;
        let mut v = g.linear(z_cs, p.var(W_V_CS), None)?;
        if let Some(f_ca) = f_ca {
            if g.value(f_ca).shape() != shape.as_slice() {
                return Err(DggnError::Domain(format!(
                    "feature maps differ: {shape:?} vs {:?}",
                    g.value(f_ca).shape()
                )));
            }
            let blocked = g.detach(f_ca);
            let z_ca = self.tokens(g, p, blocked, LN_CA_GAMMA, LN_CA_BETA)?;
            let k_ca = g.linear(z_ca, p.var(W_K_CA), None)?;
            let v_ca = g.linear(z_ca, p.var(W_V_CA), None)?;
            k = g.concat1(&[k, k_ca])?;
            v = g.concat1(&[v, v_ca])?;
        }
        let attention = g.attention(q, k, v, self.cfg.n_heads, self.cfg.scale())?;
        let z_m = g.transpose12(attention)?;
        Ok(MscaOutput { z_m, attention })
    }
}

/// Outcome of a stop-gradient audit.
#[derive(Clone, Debug, PartialEq)]
pub struct StopGradientReport {
    pub path: String,
    pub checked: usize,
    /// Largest absolute gradient entry over the audited parameters.
    pub max_abs: f64,
}

/// Checks that `grads` holds no nonzero gradient for any parameter bound in
/// `bound`; fails naming the first leaking parameter.
pub fn assert_stop_gradient(path: &str, params: &ParamSet, bound: &Bound, grads: &Gradients) -> Result<StopGradientReport> {
    let mut max_abs: f64 = 0.0;
    for (slot, v) in bound.vars().iter().enumerate() {
        if let Some(t) = grads.get(*v) {
            let m = t.data().iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if m != 0.0 {
                return Err(DggnError::Invariant(format!(
                    "{path}: gradient leaks into {} (max |g| = {m:e})",
                    params.name(slot)
                )));
            }
            max_abs = max_abs.max(m);
        }
    }
    Ok(StopGradientReport {
        path: path.to_string(),
        checked: bound.vars().len(),
        max_abs,
    })
}

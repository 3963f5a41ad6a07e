use dggn_tape::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DggnError, Result};
use crate::params::{uniform_fan_in, Bound, ParamSet};

/// Fully connected classification layer `logits = W x + b`.
#[derive(Clone, Debug)]
pub struct LinearHead {
    params: ParamSet,
    n_classes: usize,
    dim: usize,
}

impl LinearHead {
    pub fn new(dim: usize, n_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.add("weight", uniform_fan_in(&[n_classes, dim], dim, &mut rng));
        params.add("bias", uniform_fan_in(&[n_classes], dim, &mut rng));
        Self { params, n_classes, dim }
    }

    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (k, d) = match weight.shape() {
            [k, d] => (*k, *d),
            s => return Err(DggnError::Config(format!("head weight must be a matrix, got {s:?}"))),
        };
        if bias.shape() != [k] {
            return Err(DggnError::Config("head bias length mismatch".into()));
        }
        let mut params = ParamSet::new();
        params.add("weight", weight);
        params.add("bias", bias);
        Ok(Self {
            params,
            n_classes: k,
            dim: d,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
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

    /// Logits `[B, K]` for features `[B, d]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.linear(x, p.var(0), Some(p.var(1)))?)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(DggnError::Domain(format!("head expects {} features, got {}", self.dim, x.len())));
        }
        let w = self.params.get(0);
        let b = self.params.get(1).data();
        Ok((0..self.n_classes)
            .map(|k| b[k] + w.row(k).iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
            .collect())
    }
}

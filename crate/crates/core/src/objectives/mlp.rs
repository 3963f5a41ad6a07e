use dggn_tape::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{Embedding, NORM_EPS};
use crate::error::{DggnError, Result};
use crate::params::{uniform_fan_in, Bound, ParamSet};

/// `normalize(W2 relu(W1 x + b1) + b2)`, used as the cross-session predictor
/// and as the class-agnostic projection head.
#[derive(Clone, Debug)]
pub struct TwoLayerMlp {
    params: ParamSet,
    dim: usize,
}

impl TwoLayerMlp {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.add("fc1.weight", uniform_fan_in(&[dim, dim], dim, &mut rng));
        params.add("fc1.bias", uniform_fan_in(&[dim], dim, &mut rng));
        params.add("fc2.weight", uniform_fan_in(&[dim, dim], dim, &mut rng));
        params.add("fc2.bias", uniform_fan_in(&[dim], dim, &mut rng));
        Self { params, dim }
    }

    pub fn zeros(dim: usize) -> Self {
        let mut m = Self::new(dim, 0);
        m.params.tensors_mut().for_each(|t| t.data_mut().fill(0.0));
        m
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

    /// Normalized outputs `[B, d]` for inputs `[B, d]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = g.linear(x, p.var(0), Some(p.var(1)))?;
        let h = g.relu(h);
        let y = g.linear(h, p.var(2), Some(p.var(3)))?;
        Ok(g.l2_normalize(y, NORM_EPS))
    }
}

/// Applies the predictor to one embedding. A zero output stays zero and is
/// flagged as not normalized.
pub fn predictor_forward(z: &Embedding, mlp: &TwoLayerMlp) -> Result<Embedding> {
    if z.vector.len() != mlp.dim {
        return Err(DggnError::Domain(format!(
            "predictor expects dimension {}, got {}",
            mlp.dim,
            z.vector.len()
        )));
    }
    let mut g = Graph::new();
    let p = mlp.bind(&mut g, false);
    let x = g.constant(Tensor::new(vec![1, mlp.dim], z.vector.clone())?);
    let y = mlp.forward(&mut g, &p, x)?;
    Ok(Embedding::normalize(g.value(y).data().to_vec()))
}

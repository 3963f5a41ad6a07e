use dggn_tape::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{DggnError, Result};

/// Channels x positions feature map of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    data: Tensor,
}

impl FeatureMap {
    pub fn new(channels: usize, len: usize, data: Vec<f64>) -> Result<Self> {
        let t = Tensor::new(vec![channels, len], data)?;
        if !t.is_finite() {
            return Err(DggnError::Domain("feature map has non-finite entries".into()));
        }
        Ok(Self { data: t })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        self.data.data()
    }

    pub fn at(&self, c: usize, t: usize) -> f64 {
        self.data.data()[c * self.len() + t]
    }

    /// As a `[1, C, L]` batch.
    pub fn batched(&self) -> Tensor {
        Tensor::new(vec![1, self.channels(), self.len()], self.data.data().to_vec()).expect("same size")
    }

    /// Sample `i` of a `[B, C, L]` batch.
    pub fn from_batched(t: &Tensor, i: usize) -> Result<Self> {
        match t.shape() {
            [b, c, l] if i < *b => {
                let n = c * l;
                Self::new(*c, *l, t.data()[i * n..(i + 1) * n].to_vec())
            }
            s => Err(DggnError::Domain(format!("cannot take sample {i} of {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub normalized: bool,
}

/// Guard below which a vector is treated as zero during normalization.
pub const NORM_EPS: f64 = 1e-12;

impl Embedding {
    /// L2-normalizes `v`; a (near-)zero vector is returned unchanged and flagged unnormalized.
    pub fn normalize(v: Vec<f64>) -> Self {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < NORM_EPS {
            return Self {
                vector: v,
                normalized: false,
            };
        }
        Self {
            vector: v.into_iter().map(|x| x / n).collect(),
            normalized: true,
        }
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

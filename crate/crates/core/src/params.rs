//! Named parameter storage shared by every trainable module.

use std::collections::HashMap;

use dggn_tape::{Gradients, Graph, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DggnError, Result};

/// Serialized form of one named tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor and returns its slot. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn get(&self, slot: usize) -> &Tensor {
        &self.tensors[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.tensors[slot]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.slot(name).map(|s| &self.tensors[s])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Puts every tensor on the graph, trainable or constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        Bound { vars }
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        self.iter()
            .map(|(n, t)| NamedArray {
                name: n.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect()
    }

    /// Overwrites values from serialized arrays; names and shapes must match exactly.
    pub fn load_arrays(&mut self, arrays: &[NamedArray]) -> Result<()> {
        if arrays.len() != self.len() {
            return Err(DggnError::Config(format!(
                "expected {} arrays, found {}",
                self.len(),
                arrays.len()
            )));
        }
        for a in arrays {
            let slot = self
                .slot(&a.name)
                .ok_or_else(|| DggnError::Config(format!("unknown array {}", a.name)))?;
            if self.tensors[slot].shape() != a.shape.as_slice() {
                return Err(DggnError::Config(format!(
                    "array {} has shape {:?}, expected {:?}",
                    a.name,
                    a.shape,
                    self.tensors[slot].shape()
                )));
            }
            self.tensors[slot] = Tensor::new(a.shape.clone(), a.data.clone())?;
        }
        Ok(())
    }

    pub fn from_arrays(arrays: &[NamedArray]) -> Result<Self> {
        let mut p = Self::new();
        for a in arrays {
            p.add(a.name.clone(), Tensor::new(a.shape.clone(), a.data.clone())?);
        }
        Ok(p)
    }
}

/// Graph handles for a [`ParamSet`], slot-aligned.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, slot: usize) -> Var {
        self.vars[slot]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient per slot, zero-filled where the root does not depend on it.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|v| grads.get_or_zeros(*v)).collect()
    }
}

/// He-normal initialization for a weight with the given fan-in.
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual linear-layer init.
pub fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).expect("shape matches")
}

use std::collections::BTreeMap;
use std::path::Path;

use dggn_tape::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{cart_fit_dense, CartParams, TreeNode};
use crate::error::{io_err, DggnError, Result};
use crate::rng::derive_seed;

/// Bootstrap of `n_min` indices per class, classes in ascending order, where
/// `n_min` is the smallest class count.
pub fn balanced_subset_with(labels: &[usize], rng: &mut impl Rng) -> Result<Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let n_min = by_class
        .values()
        .map(Vec::len)
        .min()
        .ok_or_else(|| DggnError::Domain("cannot balance an empty dataset".into()))?;
    let mut out = Vec::with_capacity(n_min * by_class.len());
    for members in by_class.values() {
        for _ in 0..n_min {
            out.push(members[rng.gen_range(0..members.len())]);
        }
    }
    Ok(out)
}

pub fn balanced_subset(labels: &[usize], seed: u64) -> Result<Vec<usize>> {
    balanced_subset_with(labels, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn rows_of(features: &Tensor) -> Result<Vec<Vec<f64>>> {
    if features.ndim() != 2 {
        return Err(DggnError::Domain(format!("features must be a matrix, got {:?}", features.shape())));
    }
    if !features.is_finite() {
        return Err(DggnError::Domain("features contain non-finite values".into()));
    }
    Ok((0..features.rows()).map(|i| features.row(i).to_vec()).collect())
}

fn remap(node: TreeNode, classes: &[usize]) -> TreeNode {
    match node {
        TreeNode::Leaf { histogram } => TreeNode::Leaf {
            histogram: histogram.into_iter().map(|(c, n)| (classes[c], n)).collect(),
        },
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => TreeNode::Split {
            feature,
            threshold,
            left: Box::new(remap(*left, classes)),
            right: Box::new(remap(*right, classes)),
        },
    }
}

fn dense_labels(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let classes: Vec<usize> = labels.iter().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let dense = labels.iter().map(|y| classes.binary_search(y).expect("present")).collect();
    (classes, dense)
}

/// Gini CART on rows of `features`, drawing `mtry` candidate features per node.
pub fn cart_fit(features: &Tensor, labels: &[usize], mtry: usize, min_samples_split: usize, seed: u64) -> Result<TreeNode> {
    let x = rows_of(features)?;
    if x.is_empty() || x.len() != labels.len() {
        return Err(DggnError::Domain("cart needs a non-empty, labelled subset".into()));
    }
    let (classes, y) = dense_labels(labels);
    let params = CartParams {
        mtry: mtry.max(1),
        min_samples_split,
    };
    let tree = cart_fit_dense(&x, &y, classes.len(), params, &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(remap(tree, &classes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate features per node; `None` means `floor(sqrt(d))`.
    pub mtry: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            mtry: None,
            min_samples_split: 2,
        }
    }
}

pub const FOREST_FORMAT: &str = "dggn-forest";
pub const FOREST_VERSION: u32 = 1;

/// Balanced random forest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    pub version: u32,
    pub n_trees: usize,
    pub mtry: usize,
    pub seed: u64,
    pub dim: usize,
    pub trees: Vec<TreeNode>,
}

/// Fits `cfg.n_trees` trees, each on its own class-balanced bootstrap.
pub fn brf_fit(features: &Tensor, labels: &[usize], cfg: &ForestConfig, seed: u64) -> Result<ForestModel> {
    if cfg.n_trees < 1 {
        return Err(DggnError::Domain("a forest needs at least one tree".into()));
    }
    let x = rows_of(features)?;
    if x.is_empty() || x.len() != labels.len() {
        return Err(DggnError::Domain("forest needs a non-empty, labelled dataset".into()));
    }
    let d = features.last_dim();
    let mtry = cfg.mtry.unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1));
    if mtry == 0 || mtry > d {
        return Err(DggnError::Config(format!("mtry {mtry} outside 1..={d}")));
    }
    let (classes, y) = dense_labels(labels);
    let params = CartParams {
        mtry,
        min_samples_split: cfg.min_samples_split,
    };
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
        let subset = balanced_subset_with(&y, &mut rng)?;
        let sx: Vec<Vec<f64>> = subset.iter().map(|&i| x[i].clone()).collect();
        let sy: Vec<usize> = subset.iter().map(|&i| y[i]).collect();
        trees.push(remap(cart_fit_dense(&sx, &sy, classes.len(), params, &mut rng), &classes));
    }
    Ok(ForestModel {
        format: FOREST_FORMAT.into(),
        version: FOREST_VERSION,
        n_trees: cfg.n_trees,
        mtry,
        seed,
        dim: d,
        trees,
    })
}

/// Majority vote over trees; ties go to the smallest class id.
pub fn majority_vote(votes: impl IntoIterator<Item = usize>) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for v in votes {
        *counts.entry(v).or_default() += 1;
    }
    // BTreeMap iterates classes ascending and `>` keeps the first maximum.
    let mut best: Option<(usize, usize)> = None;
    for (c, n) in counts {
        if best.is_none_or(|(_, bn)| n > bn) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c)
}

pub fn brf_predict(model: &ForestModel, feature: &[f64]) -> Result<usize> {
    if model.trees.is_empty() {
        return Err(DggnError::State("forest has not been fitted".into()));
    }
    if feature.len() != model.dim {
        return Err(DggnError::Domain(format!(
            "forest expects {} features, got {}",
            model.dim,
            feature.len()
        )));
    }
    Ok(majority_vote(model.trees.iter().map(|t| t.predict(feature))).expect("at least one tree"))
}

impl ForestModel {
    pub fn predict_rows(&self, features: &Tensor) -> Result<Vec<usize>> {
        (0..features.rows()).map(|i| brf_predict(self, features.row(i))).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses without serde_json's nesting limit; deep trees exceed it.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        de.disable_recursion_limit();
        let m = Self::deserialize(&mut de)?;
        de.end()?;
        if m.format != FOREST_FORMAT || m.version != FOREST_VERSION {
            return Err(DggnError::Config(format!("unsupported forest {} v{}", m.format, m.version)));
        }
        Ok(m)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(io_err(path))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// CART node. Leaves keep `(class, count)` pairs sorted by class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        histogram: Vec<(usize, usize)>,
    },
}

impl TreeNode {
    /// Majority class of the reached leaf; ties go to the smallest class id.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut node = self;
        loop {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
                TreeNode::Leaf { histogram } => return leaf_class(histogram),
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
            TreeNode::Leaf { .. } => 0,
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
            TreeNode::Leaf { .. } => 1,
        }
    }
}

fn leaf_class(histogram: &[(usize, usize)]) -> usize {
    let mut best = (usize::MAX, 0);
    for &(c, n) in histogram {
        if n > best.1 || (n == best.1 && c < best.0) {
            best = (c, n);
        }
    }
    best.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CartParams {
    pub mtry: usize,
    pub min_samples_split: usize,
}

struct Fit<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    params: CartParams,
}

fn gini_weighted(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    nf - counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / nf
}

impl Fit<'_> {
    fn histogram(&self, idx: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &i in idx {
            h[self.y[i]] += 1;
        }
        h
    }

    /// Best `(impurity, threshold)` split on one feature, if the feature varies.
    fn best_on(&self, idx: &[usize], f: usize, total: &[usize]) -> Option<(f64, f64)> {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
        let n = order.len();
        let mut left = vec![0; self.n_classes];
        let mut best: Option<(f64, f64)> = None;
        for pos in 0..n - 1 {
            left[self.y[order[pos]]] += 1;
            let (a, b) = (self.x[order[pos]][f], self.x[order[pos + 1]][f]);
            if a == b {
                continue;
            }
            let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let imp = gini_weighted(&left, pos + 1) + gini_weighted(&right, n - pos - 1);
            if best.is_none_or(|(bi, _)| imp < bi) {
                let mut thr = a + (b - a) / 2.0;
                if thr >= b || !thr.is_finite() {
                    thr = a;
                }
                best = Some((imp, thr));
            }
        }
        best
    }

    fn grow(&self, idx: Vec<usize>, rng: &mut impl Rng) -> TreeNode {
        let hist = self.histogram(&idx);
        let leaf = |h: &[usize]| TreeNode::Leaf {
            histogram: h.iter().enumerate().filter(|(_, n)| **n > 0).map(|(c, n)| (c, *n)).collect(),
        };
        let pure = hist.iter().filter(|&&n| n > 0).count() <= 1;
        if pure || idx.len() < self.params.min_samples_split.max(2) {
            return leaf(&hist);
        }
        let d = self.x[idx[0]].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let mut best: Option<(f64, usize, f64)> = None;
        for (pos, &f) in features.iter().enumerate() {
            // Past the first `mtry` draws, keep looking only until some split is valid.
            if pos >= self.params.mtry && best.is_some() {
                break;
            }
            if let Some((imp, thr)) = self.best_on(&idx, f, &hist) {
                if best.is_none_or(|(bi, _, _)| imp < bi) {
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return leaf(&hist);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| self.x[i][feature] <= threshold);
        TreeNode::Split {
            feature,
            threshold,
            left: Box::new(self.grow(l, rng)),
            right: Box::new(self.grow(r, rng)),
        }
    }
}

/// Grows a Gini CART tree on rows `x` with dense labels `y < n_classes`.
/// Leaf histograms hold dense labels; callers map them back.
pub fn cart_fit_dense(x: &[Vec<f64>], y: &[usize], n_classes: usize, params: CartParams, rng: &mut impl Rng) -> TreeNode {
    assert!(!x.is_empty() && x.len() == y.len());
    let fit = Fit { x, y, n_classes, params };
    fit.grow((0..x.len()).collect(), rng)
}

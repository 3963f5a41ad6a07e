use dggn_tape::Tensor;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DggnError, Result};

/// Per-class quota `floor(m / t)` for `t` classes seen so far.
pub fn quota(m: usize, t: usize) -> Result<usize> {
    if t == 0 {
        return Err(DggnError::Domain("quota needs at least one class".into()));
    }
    Ok(m / t)
}

/// Selected candidate indices in selection order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub indices: Vec<usize>,
    /// How many picks were requested beyond the number of candidates.
    pub shortfall: usize,
}

fn mean_row(c: &Tensor) -> Vec<f64> {
    let (n, d) = (c.rows(), c.last_dim());
    let mut mu = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mu.iter_mut().zip(c.row(i)) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    mu
}

fn sq_norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum()
}

/// Index of the best remaining candidate; strict comparison keeps the lowest index on ties.
fn pick(n: usize, taken: &[bool], score: impl Fn(usize) -> f64, maximize: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in (0..n).filter(|&i| !taken[i]) {
        let s = score(i);
        let better = match best {
            None => true,
            Some((_, b)) => {
                if maximize {
                    s > b
                } else {
                    s < b
                }
            }
        };
        if better {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Rule {
    Baep,
    Herding,
}

/// Greedy selection continuing from `start`: picks until `k` total are selected.
fn greedy(c: &Tensor, k: usize, start: &[usize], rule_for: impl Fn(usize) -> Rule) -> Selection {
    let (n, d) = (c.rows(), c.last_dim());
    let mu = mean_row(c);
    let mut taken = vec![false; n];
    let mut indices = start.to_vec();
    // Running sums over selected rows of phi(p_j) - mu and of phi(p_j).
    let mut dev_sum = vec![0.0; d];
    let mut sum = vec![0.0; d];
    for &i in start {
        taken[i] = true;
        for j in 0..d {
            dev_sum[j] += c.row(i)[j] - mu[j];
            sum[j] += c.row(i)[j];
        }
    }
    while indices.len() < k.min(n) {
        let kk = (indices.len() + 1) as f64;
        let next = match rule_for(indices.len()) {
            // ||phi(x) - mu + (1/k) sum_{j<k} (phi(p_j) - mu)||^2, maximized.
            Rule::Baep => pick(
                n,
                &taken,
                |i| sq_norm((0..d).map(|j| c.row(i)[j] - mu[j] + dev_sum[j] / kk)),
                true,
            ),
            // ||mu - (phi(x) + sum_{j<k} phi(p_j)) / k||^2, minimized.
            Rule::Herding => pick(
                n,
                &taken,
                |i| sq_norm((0..d).map(|j| mu[j] - (c.row(i)[j] + sum[j]) / kk)),
                false,
            ),
        }
        .expect("a candidate remains");
        taken[next] = true;
        indices.push(next);
        for j in 0..d {
            dev_sum[j] += c.row(next)[j] - mu[j];
            sum[j] += c.row(next)[j];
        }
    }
    Selection {
        shortfall: k.saturating_sub(n),
        indices,
    }
}

/// Boundary-aware prioritization: repeatedly takes the candidate maximizing
/// `||phi(x) - mu + (1/k) sum_{j<k} (phi(p_j) - mu)||^2`, where `k` is the
/// 1-based index of the pick being made.
pub fn baep_select(candidates: &Tensor, k: usize) -> Selection {
    greedy(candidates, k, &[], |_| Rule::Baep)
}

/// Herding: keeps the mean of the selected set as close as possible to the class mean.
pub fn herding_select(candidates: &Tensor, k: usize) -> Selection {
    greedy(candidates, k, &[], |_| Rule::Herding)
}

/// First `ceil(k/2)` picks by herding, the rest by BAEP with the running state carried over.
pub fn mixed_select(candidates: &Tensor, k: usize) -> Selection {
    let half = k.div_ceil(2);
    greedy(candidates, k, &[], |picked| if picked < half { Rule::Herding } else { Rule::Baep })
}

/// `k` distinct indices drawn uniformly.
pub fn random_select(n: usize, k: usize, seed: u64) -> Selection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = k.min(n);
    Selection {
        indices: index::sample(&mut rng, n, take).into_vec(),
        shortfall: k.saturating_sub(n),
    }
}

use dggn_tape::Tensor;

use super::forest::majority_vote;
use crate::error::{DggnError, Result};

/// `max(1, floor(avg_per_class / 2))`.
pub fn knn_k(avg_per_class: f64) -> usize {
    ((avg_per_class / 2.0).floor() as usize).max(1)
}

/// Majority label among the `K` nearest training rows (Euclidean; distance ties
/// by lower row index, vote ties by smaller class id).
pub fn knn_baseline(train: &Tensor, labels: &[usize], query: &[f64], avg_per_class: f64) -> Result<usize> {
    if train.rows() == 0 || labels.is_empty() {
        return Err(DggnError::State("knn has no training data".into()));
    }
    if labels.len() != train.rows() || query.len() != train.last_dim() {
        return Err(DggnError::Domain("knn shape mismatch".into()));
    }
    let mut d: Vec<(f64, usize)> = (0..train.rows())
        .map(|i| {
            let dist = train.row(i).iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (dist, i)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = knn_k(avg_per_class).min(d.len());
    Ok(majority_vote(d[..k].iter().map(|&(_, i)| labels[i])).expect("k >= 1"))
}

use dggn_tape::Tensor;
use serde::{Deserialize, Serialize};

use super::{check_tau, check_unit_rows, gram_backward, logsumexp, scaled_gram};
use crate::error::{DggnError, Result};

/// How per-anchor terms are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Plain sum over anchors.
    Sum,
    /// Mean over anchors that have at least one positive.
    #[default]
    Mean,
}

#[derive(Clone, Debug)]
pub struct SupConOutput {
    pub loss: f64,
    pub grad: Tensor,
    /// Anchors with at least one positive.
    pub anchors: usize,
    /// Anchors without positives; they contribute nothing.
    pub skipped: usize,
}

/// Supervised contrastive loss over a multiview batch, with its gradient.
///
/// For anchor `i`, `A(i)` is every other view and `P(i)` the views in `A(i)`
/// sharing its label.
pub fn supcon(z: &Tensor, labels: &[usize], tau: f64, reduction: Reduction) -> Result<SupConOutput> {
    check_tau(tau)?;
    check_unit_rows(z, "supcon input")?;
    let n = z.rows();
    if labels.len() != n {
        return Err(DggnError::Domain(format!("{} labels for {n} views", labels.len())));
    }
    let s = scaled_gram(z, z, tau);
    let mut ds = vec![0.0; n * n];
    let mut loss = 0.0;
    let mut anchors = 0;
    let mut skipped = 0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            skipped += 1;
            continue;
        }
        anchors += 1;
        let row = &s[i * n..(i + 1) * n];
        let lse = logsumexp((0..n).filter(|&a| a != i).map(|a| row[a]));
        let np = positives.len() as f64;
        loss -= positives.iter().map(|&p| row[p] - lse).sum::<f64>() / np;
        for a in (0..n).filter(|&a| a != i) {
            ds[i * n + a] += (row[a] - lse).exp();
        }
        for &p in &positives {
            ds[i * n + p] -= 1.0 / np;
        }
    }
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean if anchors > 0 => 1.0 / anchors as f64,
        Reduction::Mean => 0.0,
    };
    loss *= scale;
    for v in &mut ds {
        *v *= scale;
    }
    let (da, db) = gram_backward(&ds, z, z, tau);
    let mut grad = da;
    for (g, h) in grad.data_mut().iter_mut().zip(db.data()) {
        *g += h;
    }
    Ok(SupConOutput {
        loss,
        grad,
        anchors,
        skipped,
    })
}

/// Supervised contrastive loss, summed over anchors.
pub fn supcon_loss(z: &Tensor, labels: &[usize], tau: f64) -> Result<f64> {
    Ok(supcon(z, labels, tau, Reduction::Sum)?.loss)
}

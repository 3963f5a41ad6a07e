use dggn_tape::Tensor;

use super::{check_tau, check_unit_rows, gram_backward, logsumexp, scaled_gram};
use crate::error::{DggnError, Result};

#[derive(Clone, Debug)]
pub struct InfoNceOutput {
    pub loss: f64,
    pub grad_z: Tensor,
    pub grad_zp: Tensor,
}

/// `-(1/N) sum_i log softmax_j(sim(z_i, z'_j) / tau)_i`.
///
/// With `paper_literal_denominator` the positive `j = i` is left out of the
/// denominator; that form is unbounded below.
pub fn infonce(z: &Tensor, zp: &Tensor, tau: f64, paper_literal_denominator: bool) -> Result<InfoNceOutput> {
    check_tau(tau)?;
    check_unit_rows(z, "infonce input")?;
    check_unit_rows(zp, "infonce paired input")?;
    if z.shape() != zp.shape() {
        return Err(DggnError::Domain(format!(
            "unpaired batches {:?} and {:?}",
            z.shape(),
            zp.shape()
        )));
    }
    let n = z.rows();
    if n == 0 || (paper_literal_denominator && n < 2) {
        return Err(DggnError::Domain("infonce needs a non-trivial batch".into()));
    }
    let s = scaled_gram(z, zp, tau);
    let mut ds = vec![0.0; n * n];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = &s[i * n..(i + 1) * n];
        let in_denominator = |j: &usize| !paper_literal_denominator || *j != i;
        let lse = logsumexp((0..n).filter(in_denominator).map(|j| row[j]));
        loss -= row[i] - lse;
        for j in (0..n).filter(in_denominator) {
            ds[i * n + j] += (row[j] - lse).exp() * inv_n;
        }
        ds[i * n + i] -= inv_n;
    }
    let (grad_z, grad_zp) = gram_backward(&ds, z, zp, tau);
    Ok(InfoNceOutput {
        loss: loss * inv_n,
        grad_z,
        grad_zp,
    })
}

pub fn infonce_loss(z: &Tensor, zp: &Tensor, tau: f64) -> Result<f64> {
    Ok(infonce(z, zp, tau, false)?.loss)
}

/// Class-agnostic objective: view agreement, plus alignment of the predicted
/// embeddings with the frozen anchor's after the base session.
pub fn ca_loss(
    session: usize,
    z: &Tensor,
    zp: &Tensor,
    z_pred: Option<&Tensor>,
    z_prev: Option<&Tensor>,
    tau: f64,
) -> Result<f64> {
    let base = infonce_loss(z, zp, tau)?;
    if session == 0 {
        return Ok(base);
    }
    let prev = z_prev.ok_or_else(|| DggnError::State(format!("session {session} needs a frozen anchor")))?;
    let pred = z_pred.ok_or_else(|| DggnError::State(format!("session {session} needs predictor outputs")))?;
    Ok(base + infonce_loss(pred, prev, tau)?)
}

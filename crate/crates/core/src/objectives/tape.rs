//! Loss nodes on the autodiff tape.

use dggn_tape::{Graph, Tensor, Var};

use super::classification::active_rows;
use super::{cross_entropy, infonce, kl_from_logits, rkd, supcon, Reduction};
use crate::error::{DggnError, Result};

/// Supervised contrastive loss of the embeddings at `z`; also returns skipped anchors.
pub fn supcon_node(g: &mut Graph, z: Var, labels: &[usize], tau: f64, reduction: Reduction) -> Result<(Var, usize)> {
    let out = supcon(g.value(z), labels, tau, reduction)?;
    Ok((g.scalar_node(out.loss, &[z], vec![out.grad])?, out.skipped))
}

/// Relational distillation from fixed teacher embeddings into the student at `z`.
pub fn rkd_node(g: &mut Graph, teacher: &Tensor, z: Var, tau: f64) -> Result<Var> {
    let out = rkd(teacher, g.value(z), tau)?;
    Ok(g.scalar_node(out.loss, &[z], vec![out.grad])?)
}

pub fn infonce_node(g: &mut Graph, z: Var, zp: Var, tau: f64, paper_literal_denominator: bool) -> Result<Var> {
    let out = infonce(g.value(z), g.value(zp), tau, paper_literal_denominator)?;
    Ok(g.scalar_node(out.loss, &[z, zp], vec![out.grad_z, out.grad_zp])?)
}

/// Mean cross-entropy over rows of `[B, K]` logits, softmax over the first `active` classes.
pub fn ce_node(g: &mut Graph, logits: Var, labels: &[usize], active: usize) -> Result<(Var, Tensor)> {
    let t = g.value(logits);
    let rows = active_rows(t, active)?;
    if labels.len() != rows.len() {
        return Err(DggnError::Domain("one label per row required".into()));
    }
    let k = t.last_dim();
    let b = rows.len() as f64;
    let mut grad = vec![0.0; t.len()];
    let mut probs = vec![0.0; t.len()];
    let mut loss = 0.0;
    for (i, (row, &y)) in rows.iter().zip(labels).enumerate() {
        let o = cross_entropy(row, y)?;
        loss += o.loss / b;
        for j in 0..active {
            grad[i * k + j] = o.grad[j] / b;
            probs[i * k + j] = o.probs[j];
        }
    }
    let shape = t.shape().to_vec();
    let probs = Tensor::new(shape.clone(), probs)?;
    let node = g.scalar_node(loss, &[logits], vec![Tensor::new(shape, grad)?])?;
    Ok((node, probs))
}

/// Mean KL alignment of fixed targets `p_m` (`[B, K]`, zero beyond `active`)
/// against the softmax of `logits_cs` over the first `active` classes.
pub fn kl_node(g: &mut Graph, p_m: &Tensor, logits_cs: Var, active: usize) -> Result<Var> {
    let t = g.value(logits_cs);
    if p_m.shape() != t.shape() {
        return Err(DggnError::Domain("target and logits shapes differ".into()));
    }
    let rows = active_rows(t, active)?;
    let k = t.last_dim();
    let b = rows.len() as f64;
    let mut grad = vec![0.0; t.len()];
    let mut loss = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let (l, gr) = kl_from_logits(&p_m.row(i)[..active], row)?;
        loss += l / b;
        for j in 0..active {
            grad[i * k + j] = gr[j] / b;
        }
    }
    let shape = t.shape().to_vec();
    Ok(g.scalar_node(loss, &[logits_cs], vec![Tensor::new(shape, grad)?])?)
}

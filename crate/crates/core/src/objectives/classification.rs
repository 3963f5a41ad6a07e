use dggn_tape::Tensor;

use super::LinearHead;
use crate::encoder::FeatureMap;
use crate::error::{DggnError, Result};

/// Smoothing added inside logarithms of probabilities.
pub const LOG_EPS: f64 = 1e-12;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug)]
pub struct CeOutput {
    pub loss: f64,
    /// Gradient w.r.t. the logits.
    pub grad: Vec<f64>,
    pub probs: Vec<f64>,
}

/// `-log(softmax(logits)_label + eps)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<CeOutput> {
    if label >= logits.len() {
        return Err(DggnError::Domain(format!(
            "label {label} outside {} classes",
            logits.len()
        )));
    }
    let probs = softmax(logits);
    let py = probs[label];
    let loss = -(py + LOG_EPS).ln();
    let k = py / (py + LOG_EPS);
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, p)| k * (p - if j == label { 1.0 } else { 0.0 }))
        .collect();
    Ok(CeOutput { loss, grad, probs })
}

/// Cross-entropy of the linear head on the globally pooled fused map.
pub fn mcls_loss(z_m: &FeatureMap, label: usize, head: &LinearHead) -> Result<f64> {
    if z_m.channels() != head.dim() {
        return Err(DggnError::Domain(format!(
            "fused map has {} channels, head expects {}",
            z_m.channels(),
            head.dim()
        )));
    }
    let len = z_m.len() as f64;
    let pooled: Vec<f64> = z_m.data().chunks(z_m.len()).map(|c| c.iter().sum::<f64>() / len).collect();
    Ok(cross_entropy(&head.logits(&pooled)?, label)?.loss)
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(DggnError::Domain(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(DggnError::Domain(format!("{what} sums to {s}, expected 1")));
    }
    Ok(())
}

/// `sum_i p_m(i) [log(p_m(i) + eps) - log(p_cs(i) + eps)]`; entries with `p_m = 0` add nothing.
pub fn kl_align_loss(p_m: &[f64], p_cs: &[f64]) -> Result<f64> {
    if p_m.len() != p_cs.len() {
        return Err(DggnError::Domain("distributions differ in length".into()));
    }
    check_distribution(p_m, "p_m")?;
    check_distribution(p_cs, "p_cs")?;
    Ok(p_m
        .iter()
        .zip(p_cs)
        .filter(|(m, _)| **m > 0.0)
        .map(|(m, c)| m * ((m + LOG_EPS).ln() - (c + LOG_EPS).ln()))
        .sum())
}

/// KL alignment against `softmax(logits_cs)` and its gradient w.r.t. those logits.
pub fn kl_from_logits(p_m: &[f64], logits_cs: &[f64]) -> Result<(f64, Vec<f64>)> {
    let p = softmax(logits_cs);
    let loss = kl_align_loss(p_m, &p)?;
    let a: Vec<f64> = p_m.iter().zip(&p).map(|(m, q)| -m / (q + LOG_EPS)).collect();
    let dot: f64 = p.iter().zip(&a).map(|(q, ai)| q * ai).sum();
    let grad = p.iter().zip(&a).map(|(q, ai)| q * (ai - dot)).collect();
    Ok((loss, grad))
}

/// Rows of `[B, K]` logits restricted to the first `active` columns.
pub(crate) fn active_rows(logits: &Tensor, active: usize) -> Result<Vec<&[f64]>> {
    let k = logits.last_dim();
    if logits.ndim() != 2 || active == 0 || active > k {
        return Err(DggnError::Domain(format!(
            "cannot take {active} active classes of logits {:?}",
            logits.shape()
        )));
    }
    Ok((0..logits.rows()).map(|i| &logits.row(i)[..active]).collect())
}

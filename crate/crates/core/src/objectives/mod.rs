//! Training objectives. Each loss is a pure function on embedding matrices
//! (`[n, d]`, one row per view) that also returns its analytic gradient, so it
//! can be attached to the tape as a scalar node.

mod classification;
mod contrastive;
mod head;
mod infonce;
mod mlp;
mod similarity;
mod tape;
mod total;

pub use classification::{cross_entropy, kl_align_loss, kl_from_logits, mcls_loss, softmax, CeOutput, LOG_EPS};
pub use contrastive::{supcon, supcon_loss, Reduction, SupConOutput};
pub use head::LinearHead;
pub use infonce::{ca_loss, infonce, infonce_loss, InfoNceOutput};
pub use mlp::{predictor_forward, TwoLayerMlp};
pub use similarity::{rkd, rkd_loss, similarity_distribution, RkdOutput, SimilarityDistribution};
pub use tape::{ce_node, infonce_node, kl_node, rkd_node, supcon_node};
pub use total::{total_loss, LossBreakdown, LossParts, DEFAULT_LAMBDA, DEFAULT_MU};

use dggn_tape::Tensor;

use crate::error::{DggnError, Result};

pub const DEFAULT_TAU: f64 = 0.07;
/// Allowed deviation of a row norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-6;

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(DggnError::Domain(format!("temperature must be positive, got {tau}")))
    }
}

pub(crate) fn check_unit_rows(z: &Tensor, what: &str) -> Result<()> {
    if z.ndim() != 2 {
        return Err(DggnError::Domain(format!("{what} must be a matrix, got {:?}", z.shape())));
    }
    for i in 0..z.rows() {
        let n = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(DggnError::Domain(format!("{what} row {i} has norm {n}, expected 1")));
        }
    }
    Ok(())
}

/// Scaled Gram matrix `a b^T / tau` of two row sets.
pub(crate) fn scaled_gram(a: &Tensor, b: &Tensor, tau: f64) -> Vec<f64> {
    let (n, m) = (a.rows(), b.rows());
    let mut s = vec![0.0; n * m];
    for i in 0..n {
        let ai = a.row(i);
        for j in 0..m {
            s[i * m + j] = ai.iter().zip(b.row(j)).map(|(x, y)| x * y).sum::<f64>() / tau;
        }
    }
    s
}

/// Chains `dL/ds` (for `s = a b^T / tau`, `n x m`) to `(dL/da, dL/db)`.
pub(crate) fn gram_backward(ds: &[f64], a: &Tensor, b: &Tensor, tau: f64) -> (Tensor, Tensor) {
    let (n, m, d) = (a.rows(), b.rows(), a.last_dim());
    let mut da = vec![0.0; n * d];
    let mut db = vec![0.0; m * d];
    for i in 0..n {
        for j in 0..m {
            let gij = ds[i * m + j] / tau;
            if gij == 0.0 {
                continue;
            }
            let (ai, bj) = (a.row(i), b.row(j));
            for k in 0..d {
                da[i * d + k] += gij * bj[k];
                db[j * d + k] += gij * ai[k];
            }
        }
    }
    (
        Tensor::new(vec![n, d], da).expect("shape"),
        Tensor::new(vec![m, d], db).expect("shape"),
    )
}

/// `log sum exp` over the given values.
pub(crate) fn logsumexp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

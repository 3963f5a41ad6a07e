use dggn_tape::Tensor;

use super::{check_tau, check_unit_rows, gram_backward, logsumexp, scaled_gram};
use crate::error::{DggnError, Result};

/// Row-stochastic similarity matrix over anchor sets; the diagonal is zero.
#[derive(Clone, Debug)]
pub struct SimilarityDistribution {
    pub q: Tensor,
    pub tau: f64,
}

fn log_q(z: &Tensor, tau: f64) -> Vec<f64> {
    let n = z.rows();
    let s = scaled_gram(z, z, tau);
    let mut out = vec![f64::NEG_INFINITY; n * n];
    for i in 0..n {
        let row = &s[i * n..(i + 1) * n];
        let lse = logsumexp((0..n).filter(|&a| a != i).map(|a| row[a]));
        for a in (0..n).filter(|&a| a != i) {
            out[i * n + a] = row[a] - lse;
        }
    }
    out
}

fn check_batch(z: &Tensor, tau: f64) -> Result<()> {
    check_tau(tau)?;
    check_unit_rows(z, "similarity input")?;
    if z.rows() < 2 {
        return Err(DggnError::Domain("similarity distribution needs at least 2 rows".into()));
    }
    Ok(())
}

/// `Q(z_i; z_a) = softmax_{a != i}(z_i . z_a / tau)`.
pub fn similarity_distribution(z: &Tensor, tau: f64) -> Result<SimilarityDistribution> {
    check_batch(z, tau)?;
    let n = z.rows();
    let q = log_q(z, tau).into_iter().map(f64::exp).collect();
    Ok(SimilarityDistribution {
        q: Tensor::new(vec![n, n], q)?,
        tau,
    })
}

#[derive(Clone, Debug)]
pub struct RkdOutput {
    pub loss: f64,
    /// Gradient w.r.t. the student embeddings.
    pub grad: Tensor,
}

/// Relational distillation `-(1/n) sum_i sum_{a != i} Q^T log Q^S` with its student gradient.
pub fn rkd(teacher: &Tensor, student: &Tensor, tau: f64) -> Result<RkdOutput> {
    check_batch(teacher, tau)?;
    check_batch(student, tau)?;
    if teacher.rows() != student.rows() {
        return Err(DggnError::Domain(format!(
            "teacher batch {} != student batch {}",
            teacher.rows(),
            student.rows()
        )));
    }
    let n = teacher.rows();
    let lt = log_q(teacher, tau);
    let ls = log_q(student, tau);
    let mut loss = 0.0;
    let mut ds = vec![0.0; n * n];
    for i in 0..n {
        for a in (0..n).filter(|&a| a != i) {
            let k = i * n + a;
            let qt = lt[k].exp();
            loss -= qt * ls[k];
            // d/ds_ia of -sum_a qt log softmax(s)_a = qs_a - qt_a (rows of qt sum to 1).
            ds[k] = (ls[k].exp() - qt) / n as f64;
        }
    }
    let (da, db) = gram_backward(&ds, student, student, tau);
    let mut grad = da;
    for (g, h) in grad.data_mut().iter_mut().zip(db.data()) {
        *g += h;
    }
    Ok(RkdOutput {
        loss: loss / n as f64,
        grad,
    })
}

pub fn rkd_loss(teacher: &Tensor, student: &Tensor, tau: f64) -> Result<f64> {
    Ok(rkd(teacher, student, tau)?.loss)
}

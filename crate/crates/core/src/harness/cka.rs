use dggn_tape::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{DggnError, Result};

fn centered(x: &Tensor) -> Vec<Vec<f64>> {
    let (n, d) = (x.rows(), x.last_dim());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    (0..n).map(|i| x.row(i).iter().zip(&mean).map(|(v, m)| v - m).collect()).collect()
}

/// Squared Frobenius norm of `a^T b` for row sets `a` (`n x p`) and `b` (`n x q`).
fn cross_frob2(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (p, q) = (a[0].len(), b[0].len());
    let mut m = vec![0.0; p * q];
    for (ra, rb) in a.iter().zip(b) {
        for i in 0..p {
            if ra[i] == 0.0 {
                continue;
            }
            for j in 0..q {
                m[i * q + j] += ra[i] * rb[j];
            }
        }
    }
    m.iter().map(|v| v * v).sum()
}

/// Linear CKA `||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F)` with column-centred
/// inputs. Zero-variance inputs give `NaN` and a warning.
pub fn cka_similarity(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.ndim() != 2 || y.ndim() != 2 || x.rows() != y.rows() {
        return Err(DggnError::Domain(format!(
            "cka needs matrices with equal rows, got {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if x.rows() == 0 {
        return Err(DggnError::Domain("cka needs at least one row".into()));
    }
    let (xc, yc) = (centered(x), centered(y));
    let xx = cross_frob2(&xc, &xc).sqrt();
    let yy = cross_frob2(&yc, &yc).sqrt();
    if xx == 0.0 || yy == 0.0 {
        log::warn!("cka undefined for zero-variance input");
        return Ok(f64::NAN);
    }
    Ok(cross_frob2(&yc, &xc) / (xx * yy))
}

/// Pairwise similarity of per-session representations of both branches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaMatrix {
    /// `cs_s<i>` / `ca_s<i>` for session `i`.
    pub labels: Vec<String>,
    /// `None` where undefined.
    pub values: Vec<Vec<Option<f64>>>,
    /// Mean over session pairs `i < j` within each branch.
    pub cs_cross_session_mean: Option<f64>,
    pub ca_cross_session_mean: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn cross_mean(reps: &[Tensor]) -> Result<Option<f64>> {
    let mut vals = Vec::new();
    for i in 0..reps.len() {
        for j in i + 1..reps.len() {
            vals.push(cka_similarity(&reps[i], &reps[j])?);
        }
    }
    let ok: Vec<f64> = vals.into_iter().filter(|v| v.is_finite()).collect();
    Ok((!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64))
}

impl CkaMatrix {
    pub fn build(cs: &[Tensor], ca: &[Tensor]) -> Result<Self> {
        let mut labels: Vec<String> = (0..cs.len()).map(|i| format!("cs_s{}", i + 1)).collect();
        labels.extend((0..ca.len()).map(|i| format!("ca_s{}", i + 1)));
        let all: Vec<&Tensor> = cs.iter().chain(ca).collect();
        let mut values = vec![vec![None; all.len()]; all.len()];
        for i in 0..all.len() {
            for j in i..all.len() {
                let v = finite(cka_similarity(all[i], all[j])?);
                values[i][j] = v;
                values[j][i] = v;
            }
        }
        Ok(Self {
            labels,
            values,
            cs_cross_session_mean: cross_mean(cs)?,
            ca_cross_session_mean: cross_mean(ca)?,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("branch");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.values) {
            s.push_str(l);
            for v in row {
                match v {
                    Some(v) => s.push_str(&format!(",{v:.6}")),
                    None => s.push_str(",NaN"),
                }
            }
            s.push('\n');
        }
        s
    }
}

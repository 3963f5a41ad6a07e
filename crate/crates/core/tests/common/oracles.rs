//! Direct double-loop reference evaluations.

use dggn_tape::Tensor;

use super::random;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mean_row(c: &Tensor) -> Vec<f64> {
    let d = c.last_dim();
    (0..d).map(|j| (0..c.rows()).map(|i| c.row(i)[j]).sum::<f64>() / c.rows() as f64).collect()
}

/// Summed supervised contrastive loss; anchors without positives contribute nothing.
pub fn supcon(z: &Tensor, labels: &[usize], tau: f64) -> f64 {
    let n = z.rows();
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += (dot(z.row(i), z.row(a)) / tau).exp();
            }
        }
        let pos: Vec<usize> = (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        let mut s = 0.0;
        for &p in &pos {
            s += ((dot(z.row(i), z.row(p)) / tau).exp() / denom).ln();
        }
        total -= s / pos.len() as f64;
    }
    total
}

/// Row-wise softmax of similarities excluding the diagonal.
pub fn similarity(z: &Tensor, tau: f64) -> Vec<Vec<f64>> {
    let n = z.rows();
    (0..n)
        .map(|i| {
            let e: Vec<f64> = (0..n)
                .map(|a| if a == i { 0.0 } else { (dot(z.row(i), z.row(a)) / tau).exp() })
                .collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn rkd(t: &Tensor, s: &Tensor, tau: f64) -> f64 {
    let (qt, qs) = (similarity(t, tau), similarity(s, tau));
    let n = t.rows();
    let mut l = 0.0;
    for i in 0..n {
        for a in 0..n {
            if a != i {
                l -= qt[i][a] * qs[i][a].ln();
            }
        }
    }
    l / n as f64
}

/// Mean entropy of the rows of the similarity distribution.
pub fn similarity_entropy(z: &Tensor, tau: f64) -> f64 {
    let q = similarity(z, tau);
    q.iter()
        .map(|r| -r.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>())
        .sum::<f64>()
        / q.len() as f64
}

pub fn infonce(z: &Tensor, zp: &Tensor, tau: f64) -> f64 {
    let n = z.rows();
    let mut l = 0.0;
    for i in 0..n {
        let denom: f64 = (0..n).map(|j| (dot(z.row(i), zp.row(j)) / tau).exp()).sum();
        l -= ((dot(z.row(i), zp.row(i)) / tau).exp() / denom).ln();
    }
    l / n as f64
}

/// Greedy exemplar selection recomputing every score from the selected list;
/// the first maximal (BAEP) or minimal (herding) index wins.
pub fn greedy_selection(c: &Tensor, k: usize, baep: bool) -> Vec<usize> {
    let mu = mean_row(c);
    let d = c.last_dim();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < k.min(c.rows()) {
        let kk = chosen.len() as f64 + 1.0;
        let mut best: Option<(usize, f64)> = None;
        for x in 0..c.rows() {
            if chosen.contains(&x) {
                continue;
            }
            let score: f64 = (0..d)
                .map(|j| {
                    let v = if baep {
                        let corr: f64 = chosen.iter().map(|&p| c.row(p)[j] - mu[j]).sum();
                        c.row(x)[j] - mu[j] + corr / kk
                    } else {
                        let s: f64 = chosen.iter().map(|&p| c.row(p)[j]).sum();
                        mu[j] - (c.row(x)[j] + s) / kk
                    };
                    v * v
                })
                .sum();
            let better = match best {
                None => true,
                Some((_, b)) => (baep && score > b) || (!baep && score < b),
            };
            if better {
                best = Some((x, score));
            }
        }
        chosen.push(best.unwrap().0);
    }
    chosen
}

fn centered_gram(x: &Tensor) -> Vec<Vec<f64>> {
    let n = x.rows();
    let k: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| dot(x.row(i), x.row(j))).collect()).collect();
    // H K H with H = I - 11^T / n.
    let row_mean: Vec<f64> = k.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let all = row_mean.iter().sum::<f64>() / n as f64;
    (0..n)
        .map(|i| (0..n).map(|j| k[i][j] - row_mean[i] - row_mean[j] + all).collect())
        .collect()
}

/// Linear CKA in HSIC form on centred Gram matrices.
pub fn cka(x: &Tensor, y: &Tensor) -> f64 {
    let (kx, ky) = (centered_gram(x), centered_gram(y));
    let f = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> f64 { a.iter().zip(b).map(|(r, s)| dot(r, s)).sum() };
    f(&kx, &ky) / (f(&kx, &kx).sqrt() * f(&ky, &ky).sqrt())
}

/// Random orthogonal matrix by Gram-Schmidt, as rows.
pub fn orthogonal(d: usize, seed: u64) -> Vec<Vec<f64>> {
    let m = random(&[d, d], seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        let mut v = m.row(i).to_vec();
        for u in &q {
            let p = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let n = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|a| *a /= n);
        q.push(v);
    }
    q
}

/// Rows of `x` multiplied by `r`.
pub fn times(x: &Tensor, r: &[Vec<f64>]) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .map(|i| (0..r[0].len()).map(|j| (0..r.len()).map(|k| x.row(i)[k] * r[k][j]).sum()).collect())
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

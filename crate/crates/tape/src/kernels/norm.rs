//! Batch and layer normalization.

/// Saved state of a training-mode batch norm over `[batch, channels, len]`.
#[derive(Clone, Debug)]
pub struct BatchNormSaved {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub fn batch_norm_train(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    batch: usize,
    channels: usize,
    len: usize,
    eps: f64,
) -> (Vec<f64>, BatchNormSaved) {
    let n = (batch * len) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let row = &x[(b * channels + c) * len..(b * channels + c + 1) * len];
            mean[c] += row.iter().sum::<f64>();
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for b in 0..batch {
        for c in 0..channels {
            let row = &x[(b * channels + c) * len..(b * channels + c + 1) * len];
            var[c] += row.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= n;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let o = (b * channels + c) * len;
            for i in o..o + len {
                let h = (x[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (
        y,
        BatchNormSaved {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

pub struct NormGrads {
    pub dx: Option<Vec<f64>>,
    pub dgamma: Option<Vec<f64>>,
    pub dbeta: Option<Vec<f64>>,
}

pub fn batch_norm_train_backward(
    dy: &[f64],
    gamma: &[f64],
    saved: &BatchNormSaved,
    batch: usize,
    channels: usize,
    len: usize,
    need: (bool, bool, bool),
) -> NormGrads {
    let n = (batch * len) as f64;
    let mut sum_dy = vec![0.0; channels];
    let mut sum_dy_xhat = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let o = (b * channels + c) * len;
            for i in o..o + len {
                sum_dy[c] += dy[i];
                sum_dy_xhat[c] += dy[i] * saved.xhat[i];
            }
        }
    }
    let dx = need.0.then(|| {
        let mut dx = vec![0.0; dy.len()];
        for b in 0..batch {
            for c in 0..channels {
                let o = (b * channels + c) * len;
                let k = gamma[c] * saved.inv_std[c] / n;
                for i in o..o + len {
                    dx[i] = k * (n * dy[i] - sum_dy[c] - saved.xhat[i] * sum_dy_xhat[c]);
                }
            }
        }
        dx
    });
    NormGrads {
        dx,
        dgamma: need.1.then_some(sum_dy_xhat),
        dbeta: need.2.then_some(sum_dy),
    }
}

/// Inference-mode batch norm with fixed statistics.
pub fn batch_norm_eval(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    mean: &[f64],
    var: &[f64],
    batch: usize,
    channels: usize,
    len: usize,
    eps: f64,
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let inv = 1.0 / (var[c] + eps).sqrt();
            let o = (b * channels + c) * len;
            for i in o..o + len {
                y[i] = gamma[c] * (x[i] - mean[c]) * inv + beta[c];
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn batch_norm_eval_backward(
    x: &[f64],
    dy: &[f64],
    gamma: &[f64],
    mean: &[f64],
    var: &[f64],
    batch: usize,
    channels: usize,
    len: usize,
    eps: f64,
    need: (bool, bool, bool),
) -> NormGrads {
    let mut dx = need.0.then(|| vec![0.0; x.len()]);
    let mut dgamma = vec![0.0; channels];
    let mut dbeta = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let inv = 1.0 / (var[c] + eps).sqrt();
            let o = (b * channels + c) * len;
            for i in o..o + len {
                dgamma[c] += dy[i] * (x[i] - mean[c]) * inv;
                dbeta[c] += dy[i];
                if let Some(dx) = dx.as_mut() {
                    dx[i] = dy[i] * gamma[c] * inv;
                }
            }
        }
    }
    NormGrads {
        dx,
        dgamma: need.1.then_some(dgamma),
        dbeta: need.2.then_some(dbeta),
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormSaved {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Layer norm over the last axis of a `[rows, width]` view.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], width: usize, eps: f64) -> (Vec<f64>, LayerNormSaved) {
    let rows = x.len() / width;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[r] = inv;
        for j in 0..width {
            let h = (row[j] - mean) * inv;
            xhat[r * width + j] = h;
            y[r * width + j] = gamma[j] * h + beta[j];
        }
    }
    (y, LayerNormSaved { xhat, inv_std })
}

pub fn layer_norm_backward(
    dy: &[f64],
    gamma: &[f64],
    saved: &LayerNormSaved,
    width: usize,
    need: (bool, bool, bool),
) -> NormGrads {
    let rows = dy.len() / width;
    let mut dgamma = vec![0.0; width];
    let mut dbeta = vec![0.0; width];
    let mut dx = need.0.then(|| vec![0.0; dy.len()]);
    let n = width as f64;
    for r in 0..rows {
        let o = r * width;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for j in 0..width {
            let g = dy[o + j] * gamma[j];
            s1 += g;
            s2 += g * saved.xhat[o + j];
            dgamma[j] += dy[o + j] * saved.xhat[o + j];
            dbeta[j] += dy[o + j];
        }
        if let Some(dx) = dx.as_mut() {
            let inv = saved.inv_std[r];
            for j in 0..width {
                let g = dy[o + j] * gamma[j];
                dx[o + j] = inv / n * (n * g - s1 - saved.xhat[o + j] * s2);
            }
        }
    }
    NormGrads {
        dx,
        dgamma: need.1.then_some(dgamma),
        dbeta: need.2.then_some(dbeta),
    }
}

//! Multi-head scaled dot-product attention over `[batch, tokens, width]` tensors.

#[derive(Clone, Copy, Debug)]
pub struct AttnGeom {
    pub batch: usize,
    pub queries: usize,
    pub keys: usize,
    pub width: usize,
    pub heads: usize,
    pub scale: f64,
}

impl AttnGeom {
    fn head_width(&self) -> usize {
        self.width / self.heads
    }
}

/// Returns the output and the attention weights `[batch, heads, queries, keys]`.
pub fn attention_forward(q: &[f64], k: &[f64], v: &[f64], g: &AttnGeom) -> (Vec<f64>, Vec<f64>) {
    let dh = g.head_width();
    let mut out = vec![0.0; g.batch * g.queries * g.width];
    let mut probs = vec![0.0; g.batch * g.heads * g.queries * g.keys];
    let mut scores = vec![0.0; g.keys];
    for b in 0..g.batch {
        for h in 0..g.heads {
            let c0 = h * dh;
            for t in 0..g.queries {
                let qrow = &q[(b * g.queries + t) * g.width + c0..(b * g.queries + t) * g.width + c0 + dh];
                let mut mx = f64::NEG_INFINITY;
                for (s, sc) in scores.iter_mut().enumerate() {
                    let krow = &k[(b * g.keys + s) * g.width + c0..(b * g.keys + s) * g.width + c0 + dh];
                    let dot: f64 = qrow.iter().zip(krow).map(|(a, b)| a * b).sum();
                    *sc = dot / g.scale;
                    mx = mx.max(*sc);
                }
                let mut z = 0.0;
                for sc in scores.iter_mut() {
                    *sc = (*sc - mx).exp();
                    z += *sc;
                }
                let prow = &mut probs[((b * g.heads + h) * g.queries + t) * g.keys..((b * g.heads + h) * g.queries + t + 1) * g.keys];
                for (p, sc) in prow.iter_mut().zip(&scores) {
                    *p = sc / z;
                }
                let orow = &mut out[(b * g.queries + t) * g.width + c0..(b * g.queries + t) * g.width + c0 + dh];
                for (s, p) in prow.iter().enumerate() {
                    let vrow = &v[(b * g.keys + s) * g.width + c0..(b * g.keys + s) * g.width + c0 + dh];
                    for (o, vv) in orow.iter_mut().zip(vrow) {
                        *o += p * vv;
                    }
                }
            }
        }
    }
    (out, probs)
}

pub struct AttnGrads {
    pub dq: Vec<f64>,
    pub dk: Vec<f64>,
    pub dv: Vec<f64>,
}

pub fn attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dout: &[f64],
    g: &AttnGeom,
) -> AttnGrads {
    let dh = g.head_width();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = vec![0.0; g.keys];
    for b in 0..g.batch {
        for h in 0..g.heads {
            let c0 = h * dh;
            for t in 0..g.queries {
                let po = ((b * g.heads + h) * g.queries + t) * g.keys;
                let prow = &probs[po..po + g.keys];
                let qo = (b * g.queries + t) * g.width + c0;
                let drow = &dout[qo..qo + dh];
                let mut dot = 0.0;
                for s in 0..g.keys {
                    let vo = (b * g.keys + s) * g.width + c0;
                    dp[s] = drow.iter().zip(&v[vo..vo + dh]).map(|(a, b)| a * b).sum();
                    dot += dp[s] * prow[s];
                    for (dvv, d) in dv[vo..vo + dh].iter_mut().zip(drow) {
                        *dvv += prow[s] * d;
                    }
                }
                for s in 0..g.keys {
                    let ds = prow[s] * (dp[s] - dot) / g.scale;
                    let ko = (b * g.keys + s) * g.width + c0;
                    for j in 0..dh {
                        dq[qo + j] += ds * k[ko + j];
                        dk[ko + j] += ds * q[qo + j];
                    }
                }
            }
        }
    }
    AttnGrads { dq, dk, dv }
}

//! 1D convolution kernels over `[batch, channels, length]` tensors.

use crate::gemm::{gemm, MatRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn output_len(len_in: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> Option<usize> {
        let span = dilation * (kernel - 1) + 1;
        let padded = len_in + 2 * padding;
        if padded < span || stride == 0 {
            return None;
        }
        Some((padded - span) / stride + 1)
    }

    #[inline]
    fn source(&self, lo: usize, kk: usize) -> Option<usize> {
        let pos = (lo * self.stride + kk * self.dilation) as isize - self.padding as isize;
        if pos >= 0 && (pos as usize) < self.len_in {
            Some(pos as usize)
        } else {
            None
        }
    }
}

/// Unfolds `x` into `[c_in * kernel, batch * len_out]`.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols = g.batch * g.len_out;
    let mut col = vec![0.0; g.c_in * g.kernel * cols];
    for ci in 0..g.c_in {
        for kk in 0..g.kernel {
            let row = &mut col[(ci * g.kernel + kk) * cols..(ci * g.kernel + kk + 1) * cols];
            for b in 0..g.batch {
                let src = &x[(b * g.c_in + ci) * g.len_in..(b * g.c_in + ci + 1) * g.len_in];
                let dst = &mut row[b * g.len_out..(b + 1) * g.len_out];
                for (lo, d) in dst.iter_mut().enumerate() {
                    if let Some(p) = g.source(lo, kk) {
                        *d = src[p];
                    }
                }
            }
        }
    }
    col
}

fn col2im_add(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let cols = g.batch * g.len_out;
    for ci in 0..g.c_in {
        for kk in 0..g.kernel {
            let row = &col[(ci * g.kernel + kk) * cols..(ci * g.kernel + kk + 1) * cols];
            for b in 0..g.batch {
                let dst = &mut dx[(b * g.c_in + ci) * g.len_in..(b * g.c_in + ci + 1) * g.len_in];
                let src = &row[b * g.len_out..(b + 1) * g.len_out];
                for (lo, s) in src.iter().enumerate() {
                    if let Some(p) = g.source(lo, kk) {
                        dst[p] += s;
                    }
                }
            }
        }
    }
}

/// `[batch, c, len] <-> [c, batch * len]` layout swap.
fn to_channel_major(y: &[f64], batch: usize, c: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for b in 0..batch {
        for ch in 0..c {
            let src = &y[(b * c + ch) * len..(b * c + ch + 1) * len];
            out[ch * batch * len + b * len..ch * batch * len + (b + 1) * len].copy_from_slice(src);
        }
    }
    out
}

fn from_channel_major(y: &[f64], batch: usize, c: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for b in 0..batch {
        for ch in 0..c {
            let src = &y[ch * batch * len + b * len..ch * batch * len + (b + 1) * len];
            out[(b * c + ch) * len..(b * c + ch + 1) * len].copy_from_slice(src);
        }
    }
    out
}

pub fn conv1d_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let ck = g.c_in * g.kernel;
    let cols = g.batch * g.len_out;
    let mut y = vec![0.0; g.c_out * cols];
    if g.kernel == 1 && g.stride == 1 && g.padding == 0 {
        let xm = to_channel_major(x, g.batch, g.c_in, g.len_in);
        gemm(
            MatRef::row_major(w, g.c_out, ck),
            MatRef::row_major(&xm, ck, cols),
            &mut y,
            0.0,
        );
    } else {
        let col = im2col(x, g);
        gemm(
            MatRef::row_major(w, g.c_out, ck),
            MatRef::row_major(&col, ck, cols),
            &mut y,
            0.0,
        );
    }
    if let Some(bias) = bias {
        for (co, bv) in bias.iter().enumerate() {
            for v in &mut y[co * cols..(co + 1) * cols] {
                *v += bv;
            }
        }
    }
    from_channel_major(&y, g.batch, g.c_out, g.len_out)
}

pub struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Option<Vec<f64>>,
    pub dbias: Option<Vec<f64>>,
}

pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads {
    let ck = g.c_in * g.kernel;
    let cols = g.batch * g.len_out;
    let dym = to_channel_major(dy, g.batch, g.c_out, g.len_out);
    let pointwise = g.kernel == 1 && g.stride == 1 && g.padding == 0;
    let mut out = ConvGrads {
        dx: None,
        dw: None,
        dbias: None,
    };
    if need_db {
        out.dbias = Some((0..g.c_out).map(|co| dym[co * cols..(co + 1) * cols].iter().sum()).collect());
    }
    if need_dw {
        let col = if pointwise {
            to_channel_major(x, g.batch, g.c_in, g.len_in)
        } else {
            im2col(x, g)
        };
        let mut dw = vec![0.0; g.c_out * ck];
        gemm(
            MatRef::row_major(&dym, g.c_out, cols),
            MatRef::transposed(&col, ck, cols),
            &mut dw,
            0.0,
        );
        out.dw = Some(dw);
    }
    if need_dx {
        let mut dcol = vec![0.0; ck * cols];
        gemm(
            MatRef::transposed(w, g.c_out, ck),
            MatRef::row_major(&dym, g.c_out, cols),
            &mut dcol,
            0.0,
        );
        if pointwise {
            out.dx = Some(from_channel_major(&dcol, g.batch, g.c_in, g.len_in));
        } else {
            let mut dx = vec![0.0; g.batch * g.c_in * g.len_in];
            col2im_add(&dcol, g, &mut dx);
            out.dx = Some(dx);
        }
    }
    out
}

/// Geometry of a stride-1 depthwise convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DepthwiseGeom {
    pub batch: usize,
    pub channels: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub kernel: usize,
    pub padding: usize,
    pub dilation: usize,
    pub circular: bool,
}

impl DepthwiseGeom {
    #[inline]
    fn source(&self, lo: usize, kk: usize) -> Option<usize> {
        let pos = (lo + kk * self.dilation) as isize - self.padding as isize;
        if self.circular {
            Some(pos.rem_euclid(self.len_in as isize) as usize)
        } else if pos >= 0 && (pos as usize) < self.len_in {
            Some(pos as usize)
        } else {
            None
        }
    }
}

pub fn depthwise_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &DepthwiseGeom) -> Vec<f64> {
    let mut y = vec![0.0; g.batch * g.channels * g.len_out];
    for b in 0..g.batch {
        for c in 0..g.channels {
            let src = &x[(b * g.channels + c) * g.len_in..(b * g.channels + c + 1) * g.len_in];
            let dst = &mut y[(b * g.channels + c) * g.len_out..(b * g.channels + c + 1) * g.len_out];
            let taps = &w[c * g.kernel..(c + 1) * g.kernel];
            let b0 = bias.map_or(0.0, |bb| bb[c]);
            for (lo, d) in dst.iter_mut().enumerate() {
                let mut acc = b0;
                for (kk, wv) in taps.iter().enumerate() {
                    if let Some(p) = g.source(lo, kk) {
                        acc += wv * src[p];
                    }
                }
                *d = acc;
            }
        }
    }
    y
}

pub fn depthwise_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &DepthwiseGeom,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads {
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0; w.len()]);
    let mut db = need_db.then(|| vec![0.0; g.channels]);
    for b in 0..g.batch {
        for c in 0..g.channels {
            let xo = (b * g.channels + c) * g.len_in;
            let yo = (b * g.channels + c) * g.len_out;
            let dyr = &dy[yo..yo + g.len_out];
            if let Some(db) = db.as_mut() {
                db[c] += dyr.iter().sum::<f64>();
            }
            for kk in 0..g.kernel {
                let wv = w[c * g.kernel + kk];
                let mut acc_w = 0.0;
                for (lo, &d) in dyr.iter().enumerate() {
                    if let Some(p) = g.source(lo, kk) {
                        acc_w += d * x[xo + p];
                        if let Some(dx) = dx.as_mut() {
                            dx[xo + p] += d * wv;
                        }
                    }
                }
                if let Some(dw) = dw.as_mut() {
                    dw[c * g.kernel + kk] += acc_w;
                }
            }
        }
    }
    ConvGrads { dx, dw, dbias: db }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut y = vec![0.0; g.batch * g.c_out * g.len_out];
        for b in 0..g.batch {
            for co in 0..g.c_out {
                for lo in 0..g.len_out {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for kk in 0..g.kernel {
                            let pos = (lo * g.stride + kk * g.dilation) as isize - g.padding as isize;
                            if pos >= 0 && (pos as usize) < g.len_in {
                                acc += w[(co * g.c_in + ci) * g.kernel + kk]
                                    * x[(b * g.c_in + ci) * g.len_in + pos as usize];
                            }
                        }
                    }
                    y[(b * g.c_out + co) * g.len_out + lo] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn im2col_conv_matches_direct_sum() {
        for &(k, s, p, d) in &[(3, 1, 1, 1), (7, 2, 3, 1), (1, 2, 0, 1), (3, 1, 2, 2), (1, 1, 0, 1)] {
            let len_in = 11;
            let len_out = ConvGeom::output_len(len_in, k, s, p, d).unwrap();
            let g = ConvGeom {
                batch: 2,
                c_in: 3,
                c_out: 4,
                len_in,
                len_out,
                kernel: k,
                stride: s,
                padding: p,
                dilation: d,
            };
            let x: Vec<f64> = (0..2 * 3 * len_in).map(|i| ((i * 37) % 17) as f64 * 0.1 - 0.8).collect();
            let w: Vec<f64> = (0..4 * 3 * k).map(|i| ((i * 11) % 7) as f64 * 0.2 - 0.6).collect();
            let got = conv1d_forward(&x, &w, None, &g);
            let want = naive_conv(&x, &w, &g);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn circular_depthwise_wraps_indices() {
        let g = DepthwiseGeom {
            batch: 1,
            channels: 1,
            len_in: 4,
            len_out: 4,
            kernel: 3,
            padding: 1,
            dilation: 1,
            circular: true,
        };
        // kernel picks the left neighbour: y[t] = x[t-1 mod L]
        let y = depthwise_forward(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 0.0], None, &g);
        assert_eq!(y, vec![4.0, 1.0, 2.0, 3.0]);
    }
}

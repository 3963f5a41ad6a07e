//! Max pooling over the last axis of `[batch, channels, len]`.

/// Returns the pooled values and, per output, the flat input index it came from.
pub fn max_pool_forward(
    x: &[f64],
    rows: usize,
    len_in: usize,
    len_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> (Vec<f64>, Vec<usize>) {
    let mut y = vec![0.0; rows * len_out];
    let mut arg = vec![0usize; rows * len_out];
    for r in 0..rows {
        let src = &x[r * len_in..(r + 1) * len_in];
        for lo in 0..len_out {
            let start = (lo * stride) as isize - padding as isize;
            let mut best = f64::NEG_INFINITY;
            let mut best_i = usize::MAX;
            for kk in 0..kernel {
                let p = start + kk as isize;
                if p >= 0 && (p as usize) < len_in && (best_i == usize::MAX || src[p as usize] > best) {
                    best = src[p as usize];
                    best_i = p as usize;
                }
            }
            y[r * len_out + lo] = best;
            arg[r * len_out + lo] = r * len_in + best_i;
        }
    }
    (y, arg)
}

use serde::{Deserialize, Serialize};

use super::SignalSample;
use crate::error::{DggnError, Result};

/// Per-channel affine standardization, fitted once and then frozen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(samples: &[SignalSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| DggnError::Domain("cannot fit a standardizer on no samples".into()))?;
        let c = first.channels();
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0.0;
        for s in samples {
            if s.channels() != c {
                return Err(DggnError::Domain("samples disagree on channel count".into()));
            }
            for ch in 0..c {
                for v in s.channel(ch) {
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
            n += s.len() as f64;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, s: &SignalSample) -> SignalSample {
        let len = s.len();
        let mut v = s.values().to_vec();
        for (ch, chunk) in v.chunks_mut(len).enumerate() {
            for x in chunk {
                *x = (*x - self.mean[ch]) / self.std[ch];
            }
        }
        s.with_values(v)
    }

    pub fn apply_all(&self, samples: &[SignalSample]) -> Vec<SignalSample> {
        samples.iter().map(|s| self.apply(s)).collect()
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{DggnError, Result};

/// One multichannel window: `channels x len` values stored channel-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSample {
    channels: usize,
    len: usize,
    values: Vec<f64>,
    pub label: usize,
    pub sample_id: u64,
}

impl SignalSample {
    pub fn new(channels: usize, len: usize, values: Vec<f64>, label: usize, sample_id: u64) -> Result<Self> {
        if channels == 0 || len == 0 {
            return Err(DggnError::Domain("sample needs at least one channel and one step".into()));
        }
        if values.len() != channels * len {
            return Err(DggnError::Domain(format!(
                "sample has {} values, expected {channels}x{len}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DggnError::Domain(format!(
                "non-finite value at channel {}, step {}",
                i / len,
                i % len
            )));
        }
        Ok(Self {
            channels,
            len,
            values,
            label,
            sample_id,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.len..(c + 1) * self.len]
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Stacks samples into a flat `[n, channels, len]` buffer.
pub fn stack(samples: &[&SignalSample]) -> Result<(Vec<usize>, Vec<f64>)> {
    let first = samples
        .first()
        .ok_or_else(|| DggnError::Domain("cannot stack an empty batch".into()))?;
    let (c, l) = (first.channels, first.len);
    let mut data = Vec::with_capacity(samples.len() * c * l);
    for s in samples {
        if s.channels != c || s.len != l {
            return Err(DggnError::Domain(format!(
                "batch mixes {}x{} and {c}x{l} samples",
                s.channels, s.len
            )));
        }
        data.extend_from_slice(&s.values);
    }
    Ok((vec![samples.len(), c, l], data))
}

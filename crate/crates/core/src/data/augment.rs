use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SignalSample;
use crate::error::{DggnError, Result};

pub const DEFAULT_SHUFFLE_FRAC: f64 = 0.2;

/// Segment length `ceil(frac * len)`, at least 1.
pub fn segment_len(frac: f64, len: usize) -> usize {
    ((frac * len as f64).ceil() as usize).clamp(1, len)
}

fn check_frac(frac: f64) -> Result<()> {
    if frac > 0.0 && frac <= 1.0 {
        Ok(())
    } else {
        Err(DggnError::Domain(format!("shuffle fraction {frac} outside (0, 1]")))
    }
}

/// Permutes a random contiguous window with one permutation shared by all channels.
///
/// Draw order: the window offset (uniform over valid offsets), then a
/// Fisher-Yates shuffle of the window positions.
pub fn segment_shuffle_with(sample: &SignalSample, frac: f64, rng: &mut impl Rng) -> Result<SignalSample> {
    check_frac(frac)?;
    let len = sample.len();
    let seg = segment_len(frac, len);
    let offset = rng.gen_range(0..=len - seg);
    let mut perm: Vec<usize> = (0..seg).collect();
    perm.shuffle(rng);
    let mut out = sample.clone();
    let src = sample.values();
    let dst = out.values_mut();
    for c in 0..sample.channels() {
        let base = c * len + offset;
        for (i, &p) in perm.iter().enumerate() {
            dst[base + i] = src[base + p];
        }
    }
    Ok(out)
}

pub fn segment_shuffle_augment(sample: &SignalSample, frac: f64, seed: u64) -> Result<SignalSample> {
    segment_shuffle_with(sample, frac, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Two augmented views per sample; views `2i` and `2i + 1` come from `origin[2i] = i`.
#[derive(Clone, Debug)]
pub struct Views {
    pub samples: Vec<SignalSample>,
    pub origin: Vec<usize>,
}

impl Views {
    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn make_views_with(batch: &[&SignalSample], frac: f64, rng: &mut impl Rng) -> Result<Views> {
    if batch.is_empty() {
        return Err(DggnError::Domain("cannot make views of an empty batch".into()));
    }
    let mut samples = Vec::with_capacity(2 * batch.len());
    let mut origin = Vec::with_capacity(2 * batch.len());
    for (i, s) in batch.iter().enumerate() {
        samples.push(segment_shuffle_with(s, frac, rng)?);
        samples.push(segment_shuffle_with(s, frac, rng)?);
        origin.extend([i, i]);
    }
    Ok(Views { samples, origin })
}

pub fn make_views(batch: &[&SignalSample], frac: f64, seed: u64) -> Result<Views> {
    make_views_with(batch, frac, &mut ChaCha8Rng::seed_from_u64(seed))
}

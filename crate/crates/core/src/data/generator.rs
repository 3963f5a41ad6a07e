//! Synthetic multichannel fault signals.
//!
//! Every sample is the sum of
//! - a base process shared by all classes (one sinusoid per channel),
//! - a class signature: a few sinusoids drawn once per class,
//! - a slow drift with random phase per sample and fixed channel loadings,
//!   following the same law for every class,
//! - white noise.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SignalSample;
use crate::error::{DggnError, Result};
use crate::rng::{derive_seed, rng_for, streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_channels: usize,
    pub length: usize,
    pub n_classes: usize,
    pub class_signature_seed: u64,
    pub noise_level: f64,
    pub shared_drift_amp: f64,
    /// Sinusoids in each class signature.
    #[serde(default = "default_components")]
    pub components_per_class: usize,
    /// Amplitude of the class-independent base process.
    #[serde(default = "default_base_amp")]
    pub base_amp: f64,
}

fn default_components() -> usize {
    4
}

fn default_base_amp() -> f64 {
    1.0
}

impl GeneratorSpec {
    pub fn tep_like() -> Self {
        Self {
            n_channels: 52,
            length: 128,
            n_classes: 10,
            class_signature_seed: 7,
            noise_level: 0.1,
            shared_drift_amp: 0.5,
            components_per_class: default_components(),
            base_amp: default_base_amp(),
        }
    }

    pub fn mff_like() -> Self {
        Self {
            n_channels: 24,
            n_classes: 6,
            ..Self::tep_like()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.length < 2 || self.n_classes == 0 {
            return Err(DggnError::Config(
                "generator needs channels >= 1, length >= 2 and classes >= 1".into(),
            ));
        }
        for (name, v) in [
            ("noise_level", self.noise_level),
            ("shared_drift_amp", self.shared_drift_amp),
            ("base_amp", self.base_amp),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DggnError::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// One sinusoid: `amp * sin(2 pi freq t / L + phase)` on one channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component {
    pub channel: usize,
    pub freq: f64,
    pub amp: f64,
    pub phase: f64,
}

/// Signature components of `class_id`, a pure function of the signature seed.
pub fn class_signature(spec: &GeneratorSpec, class_id: usize) -> Vec<Component> {
    let mut rng = rng_for(
        derive_seed(spec.class_signature_seed, streams::CLASS_SIGNATURE),
        class_id as u64,
    );
    let max_freq = (spec.length as f64 / 4.0).max(2.5);
    (0..spec.components_per_class)
        .map(|_| Component {
            channel: rng.gen_range(0..spec.n_channels),
            freq: rng.gen_range(2.0..max_freq),
            amp: rng.gen_range(0.5..1.0),
            phase: rng.gen_range(0.0..TAU),
        })
        .collect()
}

struct SharedLaw {
    base: Vec<Component>,
    loadings: Vec<f64>,
}

fn shared_law(spec: &GeneratorSpec) -> SharedLaw {
    let mut rng = rng_for(spec.class_signature_seed, streams::DRIFT_LOADINGS);
    let max_freq = (spec.length as f64 / 8.0).max(1.5);
    let base = (0..spec.n_channels)
        .map(|c| Component {
            channel: c,
            freq: rng.gen_range(1.0..max_freq),
            amp: spec.base_amp * rng.gen_range(0.5..1.0),
            phase: rng.gen_range(0.0..TAU),
        })
        .collect();
    let loadings = (0..spec.n_channels).map(|_| rng.gen_range(0.5..1.5)).collect();
    SharedLaw { base, loadings }
}

fn add_sinusoid(values: &mut [f64], len: usize, c: &Component) {
    let row = &mut values[c.channel * len..(c.channel + 1) * len];
    for (t, v) in row.iter_mut().enumerate() {
        *v += c.amp * (TAU * c.freq * t as f64 / len as f64 + c.phase).sin();
    }
}

/// Draws `count` samples of `class_id`. Sample ids are `class_id << 32 | i`.
pub fn generate_synthetic(spec: &GeneratorSpec, class_id: usize, count: usize, seed: u64) -> Result<Vec<SignalSample>> {
    spec.validate()?;
    if class_id >= spec.n_classes {
        return Err(DggnError::Domain(format!(
            "class {class_id} outside 0..{}",
            spec.n_classes
        )));
    }
    if count == 0 {
        return Err(DggnError::Domain("count must be at least 1".into()));
    }
    let (c, l) = (spec.n_channels, spec.length);
    let signature = class_signature(spec, class_id);
    let law = shared_law(spec);
    let mut template = vec![0.0; c * l];
    for comp in law.base.iter().chain(&signature) {
        add_sinusoid(&mut template, l, comp);
    }
    let noise = Normal::new(0.0, spec.noise_level).map_err(|e| DggnError::Config(e.to_string()))?;
    let mut rng = rng_for(derive_seed(seed, streams::SAMPLES), class_id as u64);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut values = template.clone();
        if spec.shared_drift_amp > 0.0 {
            let freq = rng.gen_range(0.2..1.0);
            let phase = rng.gen_range(0.0..TAU);
            for ch in 0..c {
                let a = spec.shared_drift_amp * law.loadings[ch];
                for t in 0..l {
                    values[ch * l + t] += a * (TAU * freq * t as f64 / l as f64 + phase).sin();
                }
            }
        }
        if spec.noise_level > 0.0 {
            for v in &mut values {
                *v += noise.sample(&mut rng);
            }
        }
        let id = ((class_id as u64) << 32) | i as u64;
        out.push(SignalSample::new(c, l, values, class_id, id)?);
    }
    Ok(out)
}

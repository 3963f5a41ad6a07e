#![allow(dead_code)]

pub mod oracles;

use dggn_core::classifiers::LinearBaseline;
use dggn_core::data::SignalSample;
use dggn_core::optim::OptimizerConfig;
use dggn_core::params::ParamSet;
use dggn_tape::check::relative_error;
use dggn_tape::{Graph, Tensor, Var};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-3;
/// Denominator floor of the relative error, so exact zeros compare on an absolute scale.
pub const FD_FLOOR: f64 = 1e-5;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn unit_rows(n: usize, d: usize, seed: u64) -> Tensor {
    let mut t = random(&[n, d], seed);
    for i in 0..n {
        let r = t.row_mut(i);
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= norm);
    }
    t
}

/// Fixed random projection of `v` to a scalar.
pub fn probe(g: &mut Graph, v: Var, seed: u64) -> Var {
    let w = random(g.value(v).shape(), seed);
    g.dot_const(v, &w).unwrap()
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl FdReport {
    fn record(&mut self, at: String, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric, FD_FLOOR);
        self.checked += 1;
        if e > self.worst || self.worst_at.is_empty() {
            self.worst = self.worst.max(e);
            self.worst_at = format!("{at}: analytic {analytic:.6e}, numeric {numeric:.6e}");
        }
    }

    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        if other.worst > self.worst {
            self.worst = other.worst;
            self.worst_at = other.worst_at;
        }
    }

    pub fn ok(&self) -> bool {
        self.checked > 0 && self.worst <= FD_REL_TOL
    }
}

/// Central differences on up to `per_tensor` entries of every parameter tensor.
///
/// `loss` returns the scalar and its slot-aligned analytic gradients.
pub fn check_params<M: Clone>(
    model: &M,
    access: impl Fn(&mut M) -> &mut ParamSet,
    loss: impl Fn(&M) -> (f64, Vec<Tensor>),
    per_tensor: usize,
    seed: u64,
) -> FdReport {
    let (_, grads) = loss(model);
    let mut work = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = FdReport::default();
    let n_slots = access(&mut work).len();
    for slot in 0..n_slots {
        let (name, len) = {
            let p = access(&mut work);
            (p.name(slot).to_string(), p.get(slot).len())
        };
        for i in sample(&mut rng, len, per_tensor.min(len)) {
            let orig = access(&mut work).get(slot).data()[i];
            access(&mut work).get_mut(slot).data_mut()[i] = orig + FD_STEP;
            let up = loss(&work).0;
            access(&mut work).get_mut(slot).data_mut()[i] = orig - FD_STEP;
            let down = loss(&work).0;
            access(&mut work).get_mut(slot).data_mut()[i] = orig;
            report.record(format!("{name}[{i}]"), grads[slot].data()[i], (up - down) / (2.0 * FD_STEP));
        }
    }
    report
}

/// Central differences w.r.t. every entry of `x` for a graph built by `build`.
pub fn check_input(x: &Tensor, build: impl Fn(&mut Graph, Var) -> Var) -> FdReport {
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = build(&mut g, v);
    let analytic = g.backward(out).unwrap().get_or_zeros(v);
    let mut report = FdReport::default();
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        let mut eval = |val: f64| {
            probe.data_mut()[i] = val;
            let mut g = Graph::new();
            let v = g.param(probe.clone());
            let out = build(&mut g, v);
            g.value(out).data()[0]
        };
        let numeric = (eval(orig + FD_STEP) - eval(orig - FD_STEP)) / (2.0 * FD_STEP);
        probe.data_mut()[i] = orig;
        report.record(format!("x[{i}]"), analytic.data()[i], numeric);
    }
    report
}

/// Log spectral energy of each channel over DFT bins `1..=L/2`.
pub fn spectral_features(s: &SignalSample) -> Vec<f64> {
    let l = s.len();
    (0..s.channels())
        .map(|c| {
            let row = s.channel(c);
            let mut energy = 0.0;
            for k in 1..=l / 2 {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in row.iter().enumerate() {
                    let a = std::f64::consts::TAU * (k * t) as f64 / l as f64;
                    re += v * a.cos();
                    im -= v * a.sin();
                }
                energy += (re * re + im * im) / (l * l) as f64;
            }
            (energy + 1e-9).ln()
        })
        .collect()
}

/// Held-out accuracy of softmax regression on standardized spectral features.
pub fn spectral_probe_accuracy(train: &[&SignalSample], test: &[&SignalSample]) -> f64 {
    let mut xtr: Vec<Vec<f64>> = train.iter().map(|s| spectral_features(s)).collect();
    let mut xte: Vec<Vec<f64>> = test.iter().map(|s| spectral_features(s)).collect();
    let d = xtr[0].len();
    let n = xtr.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| xtr.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| (xtr.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    for r in xtr.iter_mut().chain(xte.iter_mut()) {
        for j in 0..d {
            r[j] = (r[j] - mean[j]) / (sd[j] + 1e-9);
        }
    }
    let ytr: Vec<usize> = train.iter().map(|s| s.label).collect();
    let opt = OptimizerConfig {
        learning_rate: 0.05,
        weight_decay: 0.0,
    };
    let probe = LinearBaseline::fit(&Tensor::from_rows(&xtr).unwrap(), &ytr, 200, opt, 0).unwrap();
    let correct = xte
        .iter()
        .zip(test)
        .filter(|(x, s)| probe.predict(x).unwrap() == s.label)
        .count();
    correct as f64 / test.len() as f64
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classifiers::ForestModel;
use crate::data::SignalSample;
use crate::encoder::Encoder;
use crate::error::{DggnError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean of the per-class accuracies.
    pub macro_accuracy: f64,
    pub per_class: BTreeMap<usize, f64>,
}

/// Accuracy over `classes`; every listed class must have test samples.
pub fn score(predictions: &[usize], truth: &[usize], classes: &[usize]) -> Result<Evaluation> {
    if predictions.len() != truth.len() || truth.is_empty() {
        return Err(DggnError::Domain("predictions and labels must be equally long and non-empty".into()));
    }
    let mut hits: BTreeMap<usize, (usize, usize)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for (p, t) in predictions.iter().zip(truth) {
        let e = hits
            .get_mut(t)
            .ok_or_else(|| DggnError::Domain(format!("test label {t} outside the evaluated classes")))?;
        e.1 += 1;
        if p == t {
            e.0 += 1;
        }
    }
    let mut per_class = BTreeMap::new();
    for (c, (h, n)) in hits {
        if n == 0 {
            return Err(DggnError::Domain(format!("class {c} has no test samples")));
        }
        per_class.insert(c, h as f64 / n as f64);
    }
    let correct = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(Evaluation {
        accuracy: correct as f64 / truth.len() as f64,
        macro_accuracy: per_class.values().sum::<f64>() / per_class.len() as f64,
        per_class,
    })
}

/// Embeds `test` with `encoder` and scores the forest on it.
pub fn evaluate(encoder: &Encoder, forest: &ForestModel, test: &[&SignalSample], classes: &[usize], chunk: usize) -> Result<Evaluation> {
    let emb = encoder.embed(test, chunk)?;
    let preds = forest.predict_rows(&emb)?;
    let truth: Vec<usize> = test.iter().map(|s| s.label).collect();
    score(&preds, &truth, classes)
}

/// Mean of the last `min(window, len)` values.
pub fn checkpoint_average(values: &[f64], window: usize) -> Option<f64> {
    let n = window.min(values.len());
    (n > 0).then(|| values[values.len() - n..].iter().sum::<f64>() / n as f64)
}

/// Rounds to two decimals.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Table average: the mean of the two-decimal session values, itself rounded.
pub fn table_average(values: &[f64]) -> f64 {
    round2(values.iter().map(|v| round2(*v)).sum::<f64>() / values.len() as f64)
}

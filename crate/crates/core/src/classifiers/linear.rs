use dggn_tape::{Graph, Tensor};

use crate::error::{DggnError, Result};
use crate::objectives::{ce_node, LinearHead};
use crate::optim::{Adam, OptimizerConfig};

/// Softmax regression on frozen embeddings, trained full-batch with Adam.
#[derive(Clone, Debug)]
pub struct LinearBaseline {
    pub head: LinearHead,
    /// Class id of each output.
    pub classes: Vec<usize>,
}

impl LinearBaseline {
    pub fn fit(features: &Tensor, labels: &[usize], epochs: usize, opt: OptimizerConfig, seed: u64) -> Result<Self> {
        if features.rows() == 0 || features.rows() != labels.len() {
            return Err(DggnError::Domain("linear head needs a labelled, non-empty set".into()));
        }
        let classes: Vec<usize> = labels.iter().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let dense: Vec<usize> = labels.iter().map(|y| classes.binary_search(y).expect("present")).collect();
        let mut head = LinearHead::new(features.last_dim(), classes.len(), seed);
        let mut adam = Adam::new(opt, head.params());
        for _ in 0..epochs {
            let mut g = Graph::new();
            let p = head.bind(&mut g, true);
            let x = g.constant(features.clone());
            let logits = head.forward(&mut g, &p, x)?;
            let (loss, _) = ce_node(&mut g, logits, &dense, classes.len())?;
            let grads = g.backward(loss)?;
            adam.step(head.params_mut(), &p.gradients(&grads))?;
        }
        Ok(Self { head, classes })
    }

    /// Arg-max class; ties go to the smaller class id.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.head.logits(x)?;
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        Ok(self.classes[best])
    }
}

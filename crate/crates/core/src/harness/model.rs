//! The two-branch model and one optimization step on it.

use dggn_tape::{BatchStats, Gradients, Graph, Tensor, Var};
use rand::Rng;

use super::config::RunConfig;
use crate::data::{make_views_with, stack, SignalSample};
use crate::encoder::{BnMode, Encoder, EncoderOutput, Role};
use crate::error::{DggnError, Result};
use crate::fusion::{assert_stop_gradient, Msca, StopGradientReport};
use crate::objectives::{
    ce_node, infonce_node, kl_node, rkd_node, supcon_node, total_loss, LinearHead, LossBreakdown, LossParts,
    TwoLayerMlp,
};
use crate::optim::Adam;
use crate::params::{Bound, ParamSet};
use crate::rng::{derive_seed, streams};

/// Trainable parts and frozen snapshots.
#[derive(Clone, Debug)]
pub struct DualModel {
    pub cs: Encoder,
    pub ca: Option<Encoder>,
    pub ca_proj: Option<TwoLayerMlp>,
    pub predictor: TwoLayerMlp,
    pub msca: Msca,
    pub head_m: LinearHead,
    pub head_cs: LinearHead,
    /// Frozen class-specific encoder of the previous session.
    pub teacher: Option<Encoder>,
    /// Frozen class-agnostic encoder of the previous session.
    pub anchor: Option<Encoder>,
}

/// Adam state per trainable group, in [`DualModel::groups_mut`] order.
pub struct Optimizers(Vec<Adam>);

/// Graph handles of one training forward pass.
pub struct StepGraph {
    pub graph: Graph,
    pub cs: Bound,
    pub ca: Option<Bound>,
    pub ca_proj: Option<Bound>,
    pub predictor: Bound,
    pub msca: Bound,
    pub head_m: Bound,
    pub head_cs: Bound,
    pub stats_cs: Vec<BatchStats>,
    pub stats_ca: Vec<BatchStats>,
    /// Loss nodes; `None` when the term is inactive.
    pub l_scl: Var,
    pub l_kd: Option<Var>,
    pub l_kl: Option<Var>,
    pub l_ca: Option<Var>,
    pub l_mcls: Var,
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub skipped_anchors: usize,
}

impl DualModel {
    pub fn new(cfg: &RunConfig, n_classes: usize) -> Result<Self> {
        let s = |k: u64| derive_seed(derive_seed(cfg.seed, streams::INIT), k);
        let d = cfg.encoder.embedding_dim();
        let cs = Encoder::new(cfg.cs_encoder(), Role::ClassSpecific, s(0))?;
        let ca = if cfg.components.ca_branch {
            Some(Encoder::new(cfg.ca_encoder(), Role::ClassAgnostic, s(1))?)
        } else {
            None
        };
        let ca_proj = (cfg.components.ca_branch && cfg.components.ca_projection).then(|| TwoLayerMlp::new(d, s(2)));
        Ok(Self {
            cs,
            ca,
            ca_proj,
            predictor: TwoLayerMlp::new(d, s(3)),
            msca: Msca::new(cfg.attention.clone(), s(4))?,
            head_m: LinearHead::new(d, n_classes, s(5)),
            head_cs: LinearHead::new(d, n_classes, s(6)),
            teacher: None,
            anchor: None,
        })
    }

    /// Trainable parameter groups; optional groups are skipped when absent.
    fn groups_mut(&mut self) -> Vec<&mut ParamSet> {
        let mut v: Vec<&mut ParamSet> = Vec::new();
        if let Some(p) = self.cs.params_mut() {
            v.push(p);
        }
        if let Some(p) = self.ca.as_mut().and_then(Encoder::params_mut) {
            v.push(p);
        }
        if let Some(m) = self.ca_proj.as_mut() {
            v.push(m.params_mut());
        }
        v.push(self.predictor.params_mut());
        v.push(self.msca.params_mut());
        v.push(self.head_m.params_mut());
        v.push(self.head_cs.params_mut());
        v
    }

    pub fn optimizers(&mut self, cfg: &RunConfig) -> Optimizers {
        Optimizers(self.groups_mut().into_iter().map(|p| Adam::new(cfg.optimizer, p)).collect())
    }

    /// Snapshots the current encoders as teacher and anchor.
    pub fn freeze_snapshots(&mut self) {
        self.teacher = Some(self.cs.frozen_copy());
        self.anchor = self.ca.as_ref().map(Encoder::frozen_copy);
    }

    /// Builds the forward graph and all losses for one batch of `2N` views.
    ///
    /// `labels` are dense class indices and `active` the number of classes seen so far.
    pub fn forward_losses(
        &self,
        cfg: &RunConfig,
        session: usize,
        x: &Tensor,
        labels: &[usize],
        active: usize,
    ) -> Result<StepGraph> {
        let comps = cfg.components;
        let tau = cfg.tau;
        let n_views = labels.len();
        if n_views % 2 != 0 || x.shape()[0] != n_views {
            return Err(DggnError::Domain("views must come in pairs".into()));
        }
        let distill = session > 0 && comps.distillation;
        if distill && self.teacher.is_none() {
            return Err(DggnError::State(format!("session {session} needs a frozen teacher")));
        }
        if distill && comps.ca_branch && self.anchor.is_none() {
            return Err(DggnError::State(format!("session {session} needs a frozen anchor")));
        }
        let even: Vec<usize> = (0..n_views).step_by(2).collect();
        let odd: Vec<usize> = (1..n_views).step_by(2).collect();

        // Frozen snapshots run on their own constant graphs.
        let teacher_z = match (&self.teacher, distill) {
            (Some(t), true) => Some(eval_output(t, x, |g, o| g.value(o.embedding).clone())?),
            _ => None,
        };
        let anchor_z = match (&self.anchor, distill && comps.ca_branch) {
            (Some(a), true) => {
                let xe = gather_samples(x, &even)?;
                Some(eval_output(a, &xe, |g, o| g.value(o.embedding).clone())?)
            }
            _ => None,
        };

        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let p_cs = self.cs.bind(&mut g);
        let mut stats_cs = Vec::new();
        let out_cs = self.cs.forward(&mut g, &p_cs, xv, BnMode::Train, &mut stats_cs)?;
        let (l_scl, skipped_anchors) = supcon_node(&mut g, out_cs.embedding, labels, tau, cfg.training.supcon_reduction)?;
        let l_kd = match &teacher_z {
            Some(t) => Some(rkd_node(&mut g, t, out_cs.embedding, tau)?),
            None => None,
        };

        let mut stats_ca = Vec::new();
        let mut p_ca = None;
        let mut p_proj = None;
        let mut out_ca: Option<EncoderOutput> = None;
        let p_pred = self.predictor.bind(&mut g, true);
        let mut l_ca = None;
        if let Some(ca) = &self.ca {
            let p = ca.bind(&mut g);
            let o = ca.forward(&mut g, &p, xv, BnMode::Train, &mut stats_ca)?;
            let z = match &self.ca_proj {
                Some(m) => {
                    let pp = m.bind(&mut g, true);
                    let z = m.forward(&mut g, &pp, o.pooled)?;
                    p_proj = Some(pp);
                    z
                }
                None => o.embedding,
            };
            let z1 = g.gather_rows(z, &even)?;
            let z2 = g.gather_rows(z, &odd)?;
            let lit = cfg.training.paper_literal_denominator;
            let mut l = infonce_node(&mut g, z1, z2, tau, lit)?;
            if let Some(prev) = &anchor_z {
                let e = g.gather_rows(o.embedding, &even)?;
                let pred = self.predictor.forward(&mut g, &p_pred, e)?;
                let prev = g.constant(prev.clone());
                let align = infonce_node(&mut g, pred, prev, tau, lit)?;
                l = g.weighted_sum(&[(l, 1.0), (align, 1.0)])?;
            }
            l_ca = Some(l);
            p_ca = Some(p);
            out_ca = Some(o);
        }

        let p_msca = self.msca.bind(&mut g, true);
        let fused = if comps.msca {
            self.msca
                .forward(&mut g, &p_msca, out_cs.features, out_ca.map(|o| o.features))?
                .z_m
        } else {
            out_cs.features
        };
        let pooled_m = g.mean_last(fused);
        let p_hm = self.head_m.bind(&mut g, true);
        let logits_m = self.head_m.forward(&mut g, &p_hm, pooled_m)?;
        let (l_mcls, probs_m) = ce_node(&mut g, logits_m, labels, active)?;

        let p_hcs = self.head_cs.bind(&mut g, true);
        let l_kl = if comps.knowledge_transfer {
            let logits_cs = self.head_cs.forward(&mut g, &p_hcs, out_cs.pooled)?;
            Some(kl_node(&mut g, &probs_m, logits_cs, active)?)
        } else {
            None
        };

        let val = |g: &Graph, v: Option<Var>| v.map_or(0.0, |v| g.value(v).data()[0]);
        let parts = LossParts {
            l_scl: g.value(l_scl).data()[0],
            l_kd: val(&g, l_kd),
            l_kl: val(&g, l_kl),
            l_ca: val(&g, l_ca),
            l_mcls: g.value(l_mcls).data()[0],
        };
        let breakdown = total_loss(parts, cfg.lambda, cfg.mu);
        let mut terms = vec![(l_scl, 1.0), (l_mcls, cfg.mu)];
        terms.extend(l_kd.map(|v| (v, 1.0)));
        terms.extend(l_kl.map(|v| (v, 1.0)));
        terms.extend(l_ca.map(|v| (v, cfg.lambda)));
        let total = g.weighted_sum(&terms)?;
        Ok(StepGraph {
            graph: g,
            cs: p_cs,
            ca: p_ca,
            ca_proj: p_proj,
            predictor: p_pred,
            msca: p_msca,
            head_m: p_hm,
            head_cs: p_hcs,
            stats_cs,
            stats_ca,
            l_scl,
            l_kd,
            l_kl,
            l_ca,
            l_mcls,
            total,
            breakdown,
            skipped_anchors,
        })
    }

    /// One optimization step on `batch`. Returns the loss breakdown and the number
    /// of contrastive anchors that had no positive.
    #[allow(clippy::too_many_arguments)]
    pub fn train_step(
        &mut self,
        cfg: &RunConfig,
        opt: &mut Optimizers,
        session: usize,
        batch: &[&SignalSample],
        class_index: &dyn Fn(usize) -> usize,
        active: usize,
        rng: &mut impl Rng,
    ) -> Result<(LossBreakdown, usize)> {
        let views = make_views_with(batch, cfg.training.shuffle_frac, rng)?;
        let refs: Vec<&SignalSample> = views.samples.iter().collect();
        let (shape, data) = stack(&refs)?;
        let x = Tensor::new(shape, data)?;
        let labels: Vec<usize> = views.samples.iter().map(|s| class_index(s.label)).collect();
        let step = self.forward_losses(cfg, session, &x, &labels, active)?;
        let grads = step.graph.backward(step.total)?;
        // Groups the loss never reached keep their parameters; an Adam step on a
        // pure weight-decay gradient would otherwise drag them towards zero.
        let grad_of = |b: &Bound| b.vars().iter().any(|v| grads.reaches(*v)).then(|| b.gradients(&grads));
        let mut all: Vec<Option<Vec<Tensor>>> = Vec::new();
        if !self.cs.is_frozen() {
            all.push(grad_of(&step.cs));
        }
        if let Some(b) = &step.ca {
            all.push(grad_of(b));
        }
        if let Some(b) = &step.ca_proj {
            all.push(grad_of(b));
        }
        all.push(grad_of(&step.predictor));
        all.push(grad_of(&step.msca));
        all.push(grad_of(&step.head_m));
        all.push(grad_of(&step.head_cs));
        for ((p, g), adam) in self.groups_mut().into_iter().zip(&all).zip(opt.0.iter_mut()) {
            if let Some(g) = g {
                adam.step(p, g)?;
            }
        }
        self.cs.update_running_stats(&step.stats_cs)?;
        if let Some(ca) = &mut self.ca {
            ca.update_running_stats(&step.stats_ca)?;
        }
        Ok((step.breakdown, step.skipped_anchors))
    }

    /// Fused-head class indices for `samples` (eval mode), a diagnostic next to the forest.
    pub fn fused_predict(&self, cfg: &RunConfig, samples: &[&SignalSample], active: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(samples.len());
        for part in samples.chunks(cfg.training.eval_batch) {
            let (shape, data) = stack(part)?;
            let x = Tensor::new(shape, data)?;
            let mut g = Graph::new();
            let xv = g.constant(x);
            let p_cs = self.cs.bind_const(&mut g);
            let o_cs = self.cs.forward(&mut g, &p_cs, xv, BnMode::Eval, &mut Vec::new())?;
            let f_ca = match &self.ca {
                Some(ca) => {
                    let p = ca.bind_const(&mut g);
                    Some(ca.forward(&mut g, &p, xv, BnMode::Eval, &mut Vec::new())?.features)
                }
                None => None,
            };
            let pm = self.msca.bind(&mut g, false);
            let fused = if cfg.components.msca {
                self.msca.forward(&mut g, &pm, o_cs.features, f_ca)?.z_m
            } else {
                o_cs.features
            };
            let pooled = g.mean_last(fused);
            let ph = self.head_m.bind(&mut g, false);
            let logits = self.head_m.forward(&mut g, &ph, pooled)?;
            let t = g.value(logits);
            for i in 0..t.rows() {
                let row = &t.row(i)[..active];
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                out.push(best);
            }
        }
        Ok(out)
    }
}

fn gather_samples(x: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let per: usize = x.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(rows.len() * per);
    for &r in rows {
        data.extend_from_slice(&x.data()[r * per..(r + 1) * per]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = rows.len();
    Ok(Tensor::new(shape, data)?)
}

fn eval_output<T>(enc: &Encoder, x: &Tensor, f: impl FnOnce(&Graph, &EncoderOutput) -> T) -> Result<T> {
    let mut g = Graph::new();
    let p = enc.bind_const(&mut g);
    let xv = g.constant(x.clone());
    let o = enc.forward(&mut g, &p, xv, BnMode::Eval, &mut Vec::new())?;
    Ok(f(&g, &o))
}

/// Audits that neither the fused-classification loss nor the KL alignment sends
/// gradient into the class-agnostic encoder, and that its own objective does.
pub fn audit_stop_gradient(step: &StepGraph, model: &DualModel) -> Result<Vec<StopGradientReport>> {
    let (Some(ca), Some(bound)) = (&model.ca, &step.ca) else {
        return Err(DggnError::State("model has no class-agnostic branch".into()));
    };
    let mut reports = Vec::new();
    let g = &step.graph;
    let check = |name: &str, root: Var| -> Result<StopGradientReport> {
        let grads: Gradients = g.backward(root)?;
        assert_stop_gradient(name, ca.params(), bound, &grads)
    };
    reports.push(check("l_mcls", step.l_mcls)?);
    if let Some(kl) = step.l_kl {
        reports.push(check("l_kl", kl)?);
    }
    if let Some(l) = step.l_ca {
        let grads = g.backward(l)?;
        let max = bound
            .vars()
            .iter()
            .filter_map(|v| grads.get(*v))
            .flat_map(|t| t.data().to_vec())
            .fold(0.0f64, |a, b| a.max(b.abs()));
        if max == 0.0 {
            return Err(DggnError::Invariant("class-agnostic objective produced no gradient".into()));
        }
        reports.push(StopGradientReport {
            path: "l_ca".into(),
            checked: bound.vars().len(),
            max_abs: max,
        });
    }
    Ok(reports)
}

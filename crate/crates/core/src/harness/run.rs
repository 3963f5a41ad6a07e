//! Session-by-session training and evaluation.

use std::collections::BTreeMap;

use dggn_tape::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cka::CkaMatrix;
use super::config::{DataSource, RunConfig};
use super::evaluate::{checkpoint_average, score, Evaluation};
use super::model::DualModel;
use crate::classifiers::{brf_fit, ForestModel};
use crate::data::{ingest_csv, Dataset, SessionSchedule, SignalSample};
use crate::error::{DggnError, Result};
use crate::memory::{quota, ExemplarMemory};
use crate::objectives::LossBreakdown;
use crate::rng::{derive_seed, rng_for, streams};

/// One line of the loss trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub session: usize,
    pub l_scl: f64,
    pub l_kd: f64,
    pub l_kl: f64,
    pub l_ca: f64,
    pub l_mcls: f64,
    pub l_total: f64,
}

impl LossRecord {
    fn new(step: usize, session: usize, b: &LossBreakdown) -> Self {
        Self {
            step,
            session,
            l_scl: b.l_scl,
            l_kd: b.l_kd,
            l_kl: b.l_kl,
            l_ca: b.l_ca,
            l_mcls: b.l_mcls,
            l_total: b.l_total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub accuracy: f64,
    pub macro_accuracy: f64,
    pub fused_head_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session: usize,
    /// Cumulative classes evaluated, in schedule order.
    pub classes: Vec<usize>,
    /// Forest accuracy of the final model of the session.
    pub accuracy: f64,
    pub macro_accuracy: f64,
    pub per_class: BTreeMap<usize, f64>,
    /// Mean over the last checkpoints; the number reported in tables.
    pub checkpoint_averaged_accuracy: f64,
    pub checkpoint_averaged_macro: f64,
    pub fused_head_accuracy: f64,
    pub checkpoints: Vec<Checkpoint>,
    /// Steps `[first, last]` of this session in the loss trace.
    pub loss_trace_steps: (usize, usize),
    pub train_samples: usize,
    pub forest_train_samples: usize,
    pub skipped_anchors: usize,
    pub teacher_checksum: Option<String>,
    pub anchor_checksum: Option<String>,
    pub memory_quota: usize,
    pub memory_total: usize,
    pub memory_shortfalls: BTreeMap<usize, usize>,
}

/// Everything a run produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub config: RunConfig,
    pub sessions: Vec<SessionReport>,
    pub cka: CkaMatrix,
    /// Mean of the checkpoint-averaged session accuracies.
    pub average_accuracy: f64,
    pub final_accuracy: f64,
    pub cs_checksum: String,
}

/// Mutable state carried between sessions.
#[derive(Clone, Debug)]
pub struct RunState {
    pub model: DualModel,
    pub memory: ExemplarMemory,
    pub forest: Option<ForestModel>,
    pub sessions: Vec<SessionReport>,
    pub trace: Vec<LossRecord>,
    pub probe_cs: Vec<Tensor>,
    pub probe_ca: Vec<Tensor>,
    step: usize,
}

/// A configured experiment over a fixed dataset.
pub struct Experiment {
    pub cfg: RunConfig,
    pub schedule: SessionSchedule,
    pub data: Dataset,
    classes: Vec<usize>,
    probe: Vec<usize>,
}

impl Experiment {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule.build()?;
        let data = match &cfg.data {
            DataSource::Synthetic => Dataset::synthetic(&cfg.generator, &schedule, cfg.seed)?,
            DataSource::Csv { train, test } => Dataset::from_pools(ingest_csv(train)?, ingest_csv(test)?, &schedule)?,
        };
        Self::with_dataset(cfg, schedule, data)
    }

    pub fn with_dataset(cfg: RunConfig, schedule: SessionSchedule, data: Dataset) -> Result<Self> {
        let classes = schedule.all_classes();
        if data.shape() != (cfg.encoder.in_channels, cfg.encoder.input_len) {
            return Err(DggnError::Config(format!(
                "data windows are {:?}, encoder expects ({}, {})",
                data.shape(),
                cfg.encoder.in_channels,
                cfg.encoder.input_len
            )));
        }
        for s in data.train.iter().chain(&data.test) {
            if !classes.contains(&s.label) {
                return Err(DggnError::Domain(format!("sample label {} is not in the schedule", s.label)));
            }
        }
        let mut probe = Vec::new();
        for &c in &classes {
            probe.extend(
                data.test
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.label == c)
                    .take(cfg.training.probe_per_class)
                    .map(|(i, _)| i),
            );
        }
        Ok(Self {
            cfg,
            schedule,
            data,
            classes,
            probe,
        })
    }

    /// Dense index of a class id: its position in schedule order.
    pub fn class_index(&self, class: usize) -> usize {
        self.classes.iter().position(|&c| c == class).expect("class in schedule")
    }

    pub fn init_state(&self) -> Result<RunState> {
        Ok(RunState {
            model: DualModel::new(&self.cfg, self.classes.len())?,
            memory: ExemplarMemory::new(
                self.cfg.memory.capacity,
                self.cfg.memory.strategy,
                derive_seed(self.cfg.seed, streams::MEMORY),
            ),
            forest: None,
            sessions: Vec::new(),
            trace: Vec::new(),
            probe_cs: Vec::new(),
            probe_ca: Vec::new(),
            step: 0,
        })
    }

    pub fn probe_samples(&self) -> Vec<&SignalSample> {
        self.probe.iter().map(|&i| &self.data.test[i]).collect()
    }

    /// Forest training set: old-class exemplars cut to the new quota, plus this session's data.
    fn forest_set<'a>(&'a self, state: &'a RunState, t: usize) -> Result<Vec<&'a SignalSample>> {
        let new = &self.schedule.sessions[t].classes;
        let mut set = self.data.train_of(new);
        if t > 0 {
            let k = quota(self.cfg.memory.capacity, self.schedule.cumulative_classes(t).len())?;
            for list in state.memory.entries().values() {
                set.extend(list.iter().take(k));
            }
        }
        Ok(set)
    }

    fn checkpoint(&self, state: &mut RunState, t: usize, epoch: usize) -> Result<(Checkpoint, Evaluation)> {
        let cum = self.schedule.cumulative_classes(t);
        let train = self.forest_set(state, t)?;
        let emb = state.model.cs.embed(&train, self.cfg.training.eval_batch)?;
        let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
        let seed = derive_seed(derive_seed(self.cfg.seed, streams::FOREST), (t * 100_000 + epoch) as u64);
        let forest = brf_fit(&emb, &labels, &self.cfg.forest, seed)?;
        let test = self.data.test_of(&cum);
        let test_emb = state.model.cs.embed(&test, self.cfg.training.eval_batch)?;
        let truth: Vec<usize> = test.iter().map(|s| s.label).collect();
        let eval = score(&forest.predict_rows(&test_emb)?, &truth, &cum)?;
        let fused: Vec<usize> = state
            .model
            .fused_predict(&self.cfg, &test, cum.len())?
            .into_iter()
            .map(|i| self.classes[i])
            .collect();
        let fused_acc = fused.iter().zip(&truth).filter(|(p, y)| p == y).count() as f64 / truth.len() as f64;
        state.forest = Some(forest);
        Ok((
            Checkpoint {
                epoch,
                accuracy: eval.accuracy,
                macro_accuracy: eval.macro_accuracy,
                fused_head_accuracy: fused_acc,
            },
            eval,
        ))
    }

    /// Trains session `t` and evaluates it at periodic checkpoints.
    pub fn train_session(&self, state: &mut RunState, t: usize) -> Result<()> {
        if t != state.sessions.len() {
            return Err(DggnError::State(format!(
                "session {t} requested after {} completed sessions",
                state.sessions.len()
            )));
        }
        let cfg = &self.cfg;
        let spec = &self.schedule.sessions[t];
        let cum = self.schedule.cumulative_classes(t);
        if t > 0 && cfg.components.distillation {
            if state.model.teacher.is_none() || (cfg.components.ca_branch && state.model.anchor.is_none()) {
                return Err(DggnError::State(format!("session {t} needs frozen teacher and anchor")));
            }
        }
        let teacher_before = state.model.teacher.as_ref().map(|e| e.checksum());
        let anchor_before = state.model.anchor.as_ref().map(|e| e.checksum());

        let mut pool: Vec<&SignalSample> = self.data.train_of(&spec.classes);
        if t > 0 {
            pool.extend(state.memory.samples());
        }
        let pool: Vec<SignalSample> = pool.into_iter().cloned().collect();
        let mut rng = rng_for(derive_seed(cfg.seed, streams::AUGMENT), t as u64);
        let mut opt = state.model.optimizers(cfg);
        let index = |c: usize| self.class_index(c);
        let every = cfg.checkpoint_every();
        let first_step = state.step;
        let mut skipped = 0;
        let mut checkpoints = Vec::new();
        let mut last_eval = None;
        let mut order: Vec<usize> = (0..pool.len()).collect();
        for epoch in 1..=cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&SignalSample> = chunk.iter().map(|&i| &pool[i]).collect();
                let (b, s) = state
                    .model
                    .train_step(cfg, &mut opt, t, &batch, &index, cum.len(), &mut rng)?;
                if !b.l_total.is_finite() {
                    return Err(DggnError::Invariant(format!("non-finite loss at session {t}, epoch {epoch}")));
                }
                skipped += s;
                epoch_loss += b.l_total;
                batches += 1;
                state.trace.push(LossRecord::new(state.step, t, &b));
                state.step += 1;
            }
            log::debug!("session {t} epoch {epoch}: mean loss {:.4}", epoch_loss / batches as f64);
            if epoch % every == 0 || epoch == cfg.epochs {
                let (ck, eval) = self.checkpoint(state, t, epoch)?;
                log::info!(
                    "session {} epoch {epoch}: accuracy {:.4}, macro {:.4}, fused head {:.4}",
                    t + 1,
                    ck.accuracy,
                    ck.macro_accuracy,
                    ck.fused_head_accuracy
                );
                checkpoints.push(ck);
                last_eval = Some(eval);
            }
        }
        let teacher_after = state.model.teacher.as_ref().map(|e| e.checksum());
        let anchor_after = state.model.anchor.as_ref().map(|e| e.checksum());
        if teacher_before != teacher_after || anchor_before != anchor_after {
            return Err(DggnError::Invariant(format!("frozen snapshot changed during session {t}")));
        }
        let eval = last_eval.expect("the final epoch always evaluates");
        if eval.per_class.keys().copied().collect::<Vec<_>>() != {
            let mut c = cum.clone();
            c.sort_unstable();
            c
        } {
            return Err(DggnError::Invariant("evaluation classes differ from the cumulative set".into()));
        }
        let w = cfg.training.checkpoint_window;
        let accs: Vec<f64> = checkpoints.iter().map(|c| c.accuracy).collect();
        let macros: Vec<f64> = checkpoints.iter().map(|c| c.macro_accuracy).collect();
        let fused = checkpoints.last().map_or(0.0, |c| c.fused_head_accuracy);
        state.sessions.push(SessionReport {
            session: t,
            classes: cum,
            accuracy: eval.accuracy,
            macro_accuracy: eval.macro_accuracy,
            per_class: eval.per_class,
            checkpoint_averaged_accuracy: checkpoint_average(&accs, w).unwrap_or(0.0),
            checkpoint_averaged_macro: checkpoint_average(&macros, w).unwrap_or(0.0),
            fused_head_accuracy: fused,
            checkpoints,
            loss_trace_steps: (first_step, state.step.saturating_sub(1)),
            train_samples: pool.len(),
            forest_train_samples: self.forest_set(state, t)?.len(),
            skipped_anchors: skipped,
            teacher_checksum: teacher_after,
            anchor_checksum: anchor_after,
            memory_quota: 0,
            memory_total: 0,
            memory_shortfalls: BTreeMap::new(),
        });
        Ok(())
    }

    /// End of session `t`: new snapshots, memory update, probe embeddings.
    pub fn finish_session(&self, state: &mut RunState, t: usize) -> Result<()> {
        let spec = &self.schedule.sessions[t];
        let seen = self.schedule.cumulative_classes(t).len();
        state.model.freeze_snapshots();
        let data = self.data.train_of(&spec.classes);
        let report = state.memory.update(&data, &spec.classes, &state.model.cs, seen)?;
        let r = state
            .sessions
            .get_mut(t)
            .ok_or_else(|| DggnError::State(format!("session {t} has not been trained")))?;
        r.memory_quota = report.quota;
        r.memory_total = report.total;
        r.memory_shortfalls = report.shortfalls;
        let probe = self.probe_samples();
        let chunk = self.cfg.training.eval_batch;
        state.probe_cs.push(state.model.cs.embed(&probe, chunk)?);
        if let Some(ca) = &state.model.ca {
            state.probe_ca.push(ca.embed(&probe, chunk)?);
        }
        Ok(())
    }

    /// Runs sessions `from..` on an existing state.
    pub fn run_from(&self, mut state: RunState, from: usize) -> Result<(RunResult, RunState)> {
        for t in from..self.schedule.len() {
            if t >= state.sessions.len() {
                self.train_session(&mut state, t)?;
            }
            self.finish_session(&mut state, t)?;
        }
        let result = self.result(&state)?;
        Ok((result, state))
    }

    pub fn run(&self) -> Result<(RunResult, RunState)> {
        self.run_from(self.init_state()?, 0)
    }

    pub fn result(&self, state: &RunState) -> Result<RunResult> {
        let last = state
            .sessions
            .last()
            .ok_or_else(|| DggnError::State("no completed sessions".into()))?;
        let avg = state.sessions.iter().map(|s| s.checkpoint_averaged_accuracy).sum::<f64>() / state.sessions.len() as f64;
        Ok(RunResult {
            name: self.cfg.name.clone(),
            config: self.cfg.clone(),
            sessions: state.sessions.clone(),
            cka: CkaMatrix::build(&state.probe_cs, &state.probe_ca)?,
            average_accuracy: avg,
            final_accuracy: last.checkpoint_averaged_accuracy,
            cs_checksum: state.model.cs.checksum(),
        })
    }
}

//! Component and replay-strategy ablations over a shared base configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::TableRow;
use super::run::{Experiment, RunResult, RunState};
use crate::error::{DggnError, Result};
use crate::fusion::ScaleMode;
use crate::memory::Strategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// No memory and no distillation.
    Finetune,
    WithoutMoia,
    WithoutCa,
    WithoutMsca,
    WithoutKt,
    /// Attention scaled by `sqrt(d / h)` instead of `d / h`.
    SqrtScale,
    Replay(Strategy),
}

impl Variant {
    pub const COMPONENTS: [Variant; 5] = [
        Variant::Full,
        Variant::WithoutMoia,
        Variant::WithoutCa,
        Variant::WithoutMsca,
        Variant::WithoutKt,
    ];

    pub fn label(self) -> String {
        match self {
            Variant::Full => "DGGN".into(),
            Variant::Finetune => "Finetuning".into(),
            Variant::WithoutMoia => "w/o MOIA".into(),
            Variant::WithoutCa => "w/o CA model".into(),
            Variant::WithoutMsca => "w/o MSCA".into(),
            Variant::WithoutKt => "w/o KT".into(),
            Variant::SqrtScale => "sqrt(d/h) scale".into(),
            Variant::Replay(s) => format!("{} replay", s.name()),
        }
    }

    /// Variant for a component switch name as used on the command line.
    pub fn from_component(name: &str) -> Result<Self> {
        Ok(match name {
            "full" => Variant::Full,
            "finetune" => Variant::Finetune,
            "moia" => Variant::WithoutMoia,
            "ca_branch" | "ca" => Variant::WithoutCa,
            "msca" => Variant::WithoutMsca,
            "knowledge_transfer" | "kt" => Variant::WithoutKt,
            "sqrt_scale" => Variant::SqrtScale,
            other => {
                return Err(DggnError::Config(format!(
                    "unknown component {other:?}; expected one of full, finetune, moia, ca_branch, msca, knowledge_transfer, sqrt_scale"
                )))
            }
        })
    }

    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.name = self.label();
        match self {
            Variant::Full => {}
            Variant::Finetune => {
                c.memory.capacity = 0;
                c.components.distillation = false;
            }
            Variant::WithoutMoia => c.components.moia = false,
            Variant::WithoutCa => c.components.ca_branch = false,
            Variant::WithoutMsca => c.components.msca = false,
            Variant::WithoutKt => c.components.knowledge_transfer = false,
            Variant::SqrtScale => c.attention.scale_mode = ScaleMode::SqrtDOverH,
            Variant::Replay(s) => c.memory.strategy = s,
        }
        c
    }
}

/// Identity of the first session's training: memory, distillation and the run
/// name do not influence it.
fn base_key(cfg: &RunConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.name = String::new();
    c.memory.capacity = 0;
    c.memory.strategy = Strategy::default();
    c.components.distillation = true;
    Ok(serde_json::to_string(&c)?)
}

/// Runs each variant, training the first session once per distinct base.
pub fn run_variants(base: &RunConfig, variants: &[Variant]) -> Result<Vec<(Variant, RunResult)>> {
    let mut trained: BTreeMap<String, RunState> = BTreeMap::new();
    let mut out = Vec::with_capacity(variants.len());
    for &v in variants {
        let cfg = v.apply(base);
        let key = base_key(&cfg)?;
        let exp = Experiment::new(cfg)?;
        let state = match trained.get(&key) {
            Some(s) => {
                log::info!("{}: reusing trained first session", v.label());
                let mut s = s.clone();
                s.memory = exp.init_state()?.memory;
                s
            }
            None => {
                log::info!("{}: training first session", v.label());
                let mut s = exp.init_state()?;
                exp.train_session(&mut s, 0)?;
                trained.insert(key, s.clone());
                s
            }
        };
        let (mut result, _) = exp.run_from(state, 0)?;
        result.name = v.label();
        out.push((v, result));
    }
    Ok(out)
}

/// Comparison table, one row per variant.
pub fn ablation_rows(results: &[(Variant, RunResult)]) -> Vec<TableRow> {
    results.iter().map(|(_, r)| TableRow::from_result(r)).collect()
}

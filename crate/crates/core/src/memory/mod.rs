//! Fixed-capacity exemplar replay buffer.

mod selection;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use selection::{baep_select, herding_select, mixed_select, quota, random_select, Selection};

use crate::data::{export_csv, SignalSample};
use crate::encoder::Encoder;
use crate::error::{io_err, DggnError, Result};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Baep,
    Herding,
    Random,
    Mixed,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Baep, Strategy::Herding, Strategy::Random, Strategy::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Baep => "baep",
            Strategy::Herding => "herding",
            Strategy::Random => "random",
            Strategy::Mixed => "mixed",
        }
    }
}

/// Runs `strategy` over the embedding rows of one class.
pub fn select(strategy: Strategy, embeddings: &dggn_tape::Tensor, k: usize, seed: u64) -> Selection {
    match strategy {
        Strategy::Baep => baep_select(embeddings, k),
        Strategy::Herding => herding_select(embeddings, k),
        Strategy::Random => random_select(embeddings.rows(), k, seed),
        Strategy::Mixed => mixed_select(embeddings, k),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExemplarMemory {
    capacity: usize,
    strategy: Strategy,
    seed: u64,
    /// Current per-class quota.
    quota: usize,
    entries: BTreeMap<usize, Vec<SignalSample>>,
}

/// What one update did.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub quota: usize,
    pub total: usize,
    /// Classes that had fewer candidates than the quota, with the missing count.
    pub shortfalls: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryManifest {
    pub strategy: Strategy,
    pub capacity: usize,
    pub k: usize,
    pub classes: BTreeMap<usize, Vec<u64>>,
}

impl ExemplarMemory {
    pub fn new(capacity: usize, strategy: Strategy, seed: u64) -> Self {
        Self {
            capacity,
            strategy,
            seed,
            quota: 0,
            entries: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn quota(&self) -> usize {
        self.quota
    }

    pub fn total(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn entries(&self) -> &BTreeMap<usize, Vec<SignalSample>> {
        &self.entries
    }

    pub fn samples(&self) -> Vec<&SignalSample> {
        self.entries.values().flatten().collect()
    }

    /// Rebalances for `seen_classes` cumulative classes and selects exemplars
    /// for every class in `new_classes` from `session_data`, embedding
    /// candidates with `encoder`.
    pub fn update(
        &mut self,
        session_data: &[&SignalSample],
        new_classes: &[usize],
        encoder: &Encoder,
        seen_classes: usize,
    ) -> Result<UpdateReport> {
        let k = quota(self.capacity, seen_classes)?;
        self.update_with(session_data, new_classes, k, |cands| {
            encoder.embed(cands, 256)
        })
    }

    /// As [`update`](Self::update) with explicit quota and embedding function.
    pub fn update_with(
        &mut self,
        session_data: &[&SignalSample],
        new_classes: &[usize],
        k: usize,
        mut embed: impl FnMut(&[&SignalSample]) -> Result<dggn_tape::Tensor>,
    ) -> Result<UpdateReport> {
        self.quota = k;
        for list in self.entries.values_mut() {
            list.truncate(k);
        }
        let mut shortfalls = BTreeMap::new();
        for &c in new_classes {
            if self.entries.contains_key(&c) {
                return Err(DggnError::State(format!("class {c} is already in memory")));
            }
            let cands: Vec<&SignalSample> = session_data.iter().copied().filter(|s| s.label == c).collect();
            let chosen = if k == 0 || cands.is_empty() {
                Selection {
                    indices: vec![],
                    shortfall: k.saturating_sub(cands.len()),
                }
            } else {
                let emb = embed(&cands)?;
                select(self.strategy, &emb, k, derive_seed(self.seed, c as u64))
            };
            if chosen.shortfall > 0 {
                log::warn!("class {c}: only {} candidates for quota {k}", cands.len());
                shortfalls.insert(c, chosen.shortfall);
            }
            self.entries
                .insert(c, chosen.indices.iter().map(|&i| cands[i].clone()).collect());
        }
        let total = self.total();
        if total > self.capacity {
            return Err(DggnError::Invariant(format!(
                "memory holds {total} exemplars, capacity {}",
                self.capacity
            )));
        }
        Ok(UpdateReport {
            quota: k,
            total,
            shortfalls,
        })
    }

    pub fn manifest(&self) -> MemoryManifest {
        MemoryManifest {
            strategy: self.strategy,
            capacity: self.capacity,
            k: self.quota,
            classes: self
                .entries
                .iter()
                .map(|(c, v)| (*c, v.iter().map(|s| s.sample_id).collect()))
                .collect(),
        }
    }

    /// Writes `memory.csv` and `memory.json` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>, shape: (usize, usize)) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let samples: Vec<SignalSample> = self.samples().into_iter().cloned().collect();
        export_csv(&samples, shape, dir.join("memory.csv"))?;
        let path = dir.join("memory.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest())?).map_err(io_err(&path))
    }
}

use serde::{Deserialize, Serialize};

use super::{generate_synthetic, GeneratorSpec, SessionSchedule, SignalSample, Standardizer};
use crate::error::{DggnError, Result};
use crate::rng::{derive_seed, streams};

/// Train and test pools for a whole schedule, standardized with base-session statistics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<SignalSample>,
    pub test: Vec<SignalSample>,
    pub standardizer: Standardizer,
}

impl Dataset {
    /// Draws every class of the schedule. Sample ids are sequential: train first, then test.
    pub fn synthetic(spec: &GeneratorSpec, schedule: &SessionSchedule, seed: u64) -> Result<Self> {
        let classes = schedule.all_classes();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for &c in &classes {
            let n = schedule.train_count(c).unwrap_or(0);
            if n > 0 {
                train.extend(generate_synthetic(spec, c, n, derive_seed(seed, streams::DATA_TRAIN))?);
            }
            if schedule.test_per_class > 0 {
                test.extend(generate_synthetic(
                    spec,
                    c,
                    schedule.test_per_class,
                    derive_seed(seed, streams::DATA_TEST),
                )?);
            }
        }
        Self::from_pools(train, test, schedule)
    }

    /// Renumbers ids and standardizes with statistics of the base-session training classes.
    pub fn from_pools(mut train: Vec<SignalSample>, mut test: Vec<SignalSample>, schedule: &SessionSchedule) -> Result<Self> {
        for (i, s) in train.iter_mut().chain(test.iter_mut()).enumerate() {
            s.sample_id = i as u64;
        }
        let base = &schedule.sessions[0].classes;
        let base_train: Vec<SignalSample> = train.iter().filter(|s| base.contains(&s.label)).cloned().collect();
        if base_train.is_empty() {
            return Err(DggnError::Domain("no training samples for the base session".into()));
        }
        let standardizer = Standardizer::fit(&base_train)?;
        Ok(Self {
            train: standardizer.apply_all(&train),
            test: standardizer.apply_all(&test),
            standardizer,
        })
    }

    pub fn train_of(&self, classes: &[usize]) -> Vec<&SignalSample> {
        self.train.iter().filter(|s| classes.contains(&s.label)).collect()
    }

    pub fn test_of(&self, classes: &[usize]) -> Vec<&SignalSample> {
        self.test.iter().filter(|s| classes.contains(&s.label)).collect()
    }

    pub fn shape(&self) -> (usize, usize) {
        let s = self.train.first().or(self.test.first()).expect("dataset is non-empty");
        (s.channels(), s.len())
    }
}

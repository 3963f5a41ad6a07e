use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{DggnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Imbalanced,
    LongTailed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Tep,
    Mff,
}

/// Per-class sample budgets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub normal_train: usize,
    pub fault_train: usize,
    pub test_per_class: usize,
}

impl Budget {
    /// Published budgets for each dataset and split mode.
    pub fn standard(kind: DatasetKind, mode: SplitMode) -> Self {
        match (kind, mode) {
            (DatasetKind::Tep, SplitMode::Imbalanced) => Self {
                normal_train: 500,
                fault_train: 48,
                test_per_class: 800,
            },
            (DatasetKind::Tep, SplitMode::LongTailed) => Self {
                normal_train: 500,
                fault_train: 20,
                test_per_class: 800,
            },
            (DatasetKind::Mff, SplitMode::Imbalanced) => Self {
                normal_train: 200,
                fault_train: 10,
                test_per_class: 800,
            },
            (DatasetKind::Mff, SplitMode::LongTailed) => Self {
                normal_train: 200,
                fault_train: 5,
                test_per_class: 800,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub classes: Vec<usize>,
    /// Training samples per class, aligned with `classes`.
    pub train_counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSchedule {
    pub sessions: Vec<SessionSpec>,
    pub test_per_class: usize,
    pub mode: SplitMode,
}

impl SessionSchedule {
    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// Union of the class sets of sessions `0..=t`, in schedule order.
    pub fn cumulative_classes(&self, t: usize) -> Vec<usize> {
        self.sessions[..=t].iter().flat_map(|s| s.classes.iter().copied()).collect()
    }

    /// All classes in schedule order.
    pub fn all_classes(&self) -> Vec<usize> {
        self.cumulative_classes(self.sessions.len() - 1)
    }

    /// Session that introduces `class`.
    pub fn session_of(&self, class: usize) -> Option<usize> {
        self.sessions.iter().position(|s| s.classes.contains(&class))
    }

    pub fn train_count(&self, class: usize) -> Option<usize> {
        self.sessions.iter().find_map(|s| {
            s.classes
                .iter()
                .position(|&c| c == class)
                .map(|i| s.train_counts[i])
        })
    }

    /// Checks disjointness, alignment and non-empty sessions.
    pub fn validate(&self) -> Result<()> {
        if self.sessions.is_empty() {
            return Err(DggnError::Domain("schedule has no sessions".into()));
        }
        let mut seen = BTreeSet::new();
        for (t, s) in self.sessions.iter().enumerate() {
            if s.classes.is_empty() {
                return Err(DggnError::Domain(format!("session {t} has no classes")));
            }
            if s.classes.len() != s.train_counts.len() {
                return Err(DggnError::Domain(format!("session {t}: counts do not align with classes")));
            }
            for &c in &s.classes {
                if !seen.insert(c) {
                    return Err(DggnError::Domain(format!("class {c} appears in more than one session")));
                }
            }
        }
        Ok(())
    }
}

/// How to split classes into sessions and size each class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub class_ids: Vec<usize>,
    pub split_sizes: Vec<usize>,
    pub mode: SplitMode,
    pub dataset: DatasetKind,
    /// The fault-free class, budgeted as "normal". `None` budgets every class as a fault.
    pub normal_class: Option<usize>,
    /// Replaces the standard budgets when set.
    #[serde(default)]
    pub budget: Option<Budget>,
}

impl ScheduleConfig {
    pub fn tep(n_classes: usize, split_sizes: Vec<usize>, mode: SplitMode) -> Self {
        Self {
            class_ids: (0..n_classes).collect(),
            split_sizes,
            mode,
            dataset: DatasetKind::Tep,
            normal_class: Some(0),
            budget: None,
        }
    }

    pub fn budget(&self) -> Budget {
        self.budget.unwrap_or_else(|| Budget::standard(self.dataset, self.mode))
    }

    pub fn build(&self) -> Result<SessionSchedule> {
        let budget = self.budget();
        if self.split_sizes.iter().any(|&s| s == 0) {
            return Err(DggnError::Domain("split sizes must be positive".into()));
        }
        let total: usize = self.split_sizes.iter().sum();
        if total != self.class_ids.len() {
            return Err(DggnError::Domain(format!(
                "split sizes sum to {total} but {} classes were given",
                self.class_ids.len()
            )));
        }
        let mut sessions = Vec::with_capacity(self.split_sizes.len());
        let mut start = 0;
        for &size in &self.split_sizes {
            let classes = self.class_ids[start..start + size].to_vec();
            let train_counts = classes
                .iter()
                .map(|&c| {
                    if Some(c) == self.normal_class {
                        budget.normal_train
                    } else {
                        budget.fault_train
                    }
                })
                .collect();
            sessions.push(SessionSpec { classes, train_counts });
            start += size;
        }
        let schedule = SessionSchedule {
            sessions,
            test_per_class: budget.test_per_class,
            mode: self.mode,
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

/// TEP budgets with the first listed class as the normal class.
pub fn build_schedule(class_ids: &[usize], split_sizes: &[usize], mode: SplitMode) -> Result<SessionSchedule> {
    ScheduleConfig {
        class_ids: class_ids.to_vec(),
        split_sizes: split_sizes.to_vec(),
        mode,
        dataset: DatasetKind::Tep,
        normal_class: class_ids.first().copied(),
        budget: None,
    }
    .build()
}

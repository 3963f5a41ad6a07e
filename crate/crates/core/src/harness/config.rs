use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::ForestConfig;
use crate::data::{Budget, GeneratorSpec, ScheduleConfig, SplitMode, DEFAULT_SHUFFLE_FRAC};
use crate::encoder::EncoderConfig;
use crate::error::{io_err, DggnError, Result};
use crate::fusion::AttentionConfig;
use crate::memory::Strategy;
use crate::objectives::{Reduction, DEFAULT_LAMBDA, DEFAULT_MU, DEFAULT_TAU};
use crate::optim::OptimizerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryConfig {
    pub capacity: usize,
    pub strategy: Strategy,
}

/// Switches for the model components; all on is the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Components {
    /// MOIA in the class-specific encoder (stages per `encoder.moia_stages`).
    pub moia: bool,
    /// MOIA in the class-agnostic encoder too.
    pub moia_in_ca: bool,
    /// Class-agnostic branch, its objective and its keys/values in the fusion.
    pub ca_branch: bool,
    /// Cross-attention fusion; when off the fused head reads class-specific features directly.
    pub msca: bool,
    /// KL alignment of the class-specific head to the fused prediction.
    pub knowledge_transfer: bool,
    /// Cross-session terms: relational distillation and anchor alignment.
    pub distillation: bool,
    /// Projection head before the class-agnostic InfoNCE.
    pub ca_projection: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self {
            moia: true,
            moia_in_ca: false,
            ca_branch: true,
            msca: true,
            knowledge_transfer: true,
            distillation: true,
            ca_projection: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOptions {
    pub supcon_reduction: Reduction,
    pub paper_literal_denominator: bool,
    pub shuffle_frac: f64,
    /// Target number of periodic evaluations per session.
    pub checkpoints: usize,
    /// Evaluations averaged for the reported accuracy.
    pub checkpoint_window: usize,
    /// Chunk size for inference passes.
    pub eval_batch: usize,
    /// Test samples per class in the fixed representation-similarity probe.
    pub probe_per_class: usize,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            supcon_reduction: Reduction::Mean,
            paper_literal_denominator: false,
            shuffle_frac: DEFAULT_SHUFFLE_FRAC,
            checkpoints: 12,
            checkpoint_window: 10,
            eval_batch: 256,
            probe_per_class: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    /// Drawn from `generator`.
    #[default]
    Synthetic,
    /// Windowed CSV exports; relative paths resolve against the config file.
    Csv { train: PathBuf, test: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Row label in result tables.
    pub name: String,
    pub data: DataSource,
    pub generator: GeneratorSpec,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub tau: f64,
    pub lambda: f64,
    pub mu: f64,
    pub memory: MemoryConfig,
    pub encoder: EncoderConfig,
    pub attention: AttentionConfig,
    pub forest: ForestConfig,
    pub components: Components,
    pub training: TrainingOptions,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Published hyperparameters at full scale.
    Paper,
    /// Reduced model and budget that runs on one CPU core.
    Desk,
}

impl RunConfig {
    /// Full-scale TEP-like setup: ResNet-18 widths, batch 512, 500 epochs.
    pub fn paper() -> Self {
        let generator = GeneratorSpec::tep_like();
        let encoder = EncoderConfig::resnet18(generator.n_channels, generator.length);
        let attention = AttentionConfig::new(encoder.embedding_dim());
        Self {
            name: "DGGN".into(),
            data: DataSource::Synthetic,
            schedule: ScheduleConfig::tep(generator.n_classes, vec![2, 2, 2, 2, 2], SplitMode::Imbalanced),
            generator,
            optimizer: OptimizerConfig::default(),
            batch_size: 512,
            epochs: 500,
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
            mu: DEFAULT_MU,
            memory: MemoryConfig {
                capacity: 100,
                strategy: Strategy::Baep,
            },
            encoder,
            attention,
            forest: ForestConfig::default(),
            components: Components::default(),
            training: TrainingOptions::default(),
            seed: 0,
        }
    }

    /// Widths divided by 8, windows of 64 steps, 60 epochs of batch 64 at
    /// learning rate 0.003, and 100 test samples per class.
    pub fn desk() -> Self {
        let mut c = Self::paper();
        c.generator.length = 64;
        c.encoder = EncoderConfig::tiny(c.generator.n_channels, c.generator.length);
        c.attention = AttentionConfig::new(c.encoder.embedding_dim());
        c.optimizer.learning_rate = 0.003;
        c.batch_size = 64;
        c.epochs = 60;
        let mut budget = c.schedule.budget();
        budget.test_per_class = 100;
        c.schedule.budget = Some(budget);
        c
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn budget(&self) -> Budget {
        self.schedule.budget()
    }

    /// Encoder config of the class-specific branch, MOIA switched per components.
    pub fn cs_encoder(&self) -> EncoderConfig {
        if self.components.moia {
            self.encoder.clone()
        } else {
            self.encoder.clone().without_moia()
        }
    }

    pub fn ca_encoder(&self) -> EncoderConfig {
        if self.components.moia && self.components.moia_in_ca {
            self.encoder.clone()
        } else {
            self.encoder.clone().without_moia()
        }
    }

    /// Evaluation period in epochs, `ceil(epochs / checkpoints)`.
    pub fn checkpoint_every(&self) -> usize {
        self.epochs.div_ceil(self.training.checkpoints.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DggnError::Config(m));
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        for (name, v) in [
            ("learning_rate", self.optimizer.learning_rate),
            ("tau", self.tau),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("weight_decay", self.optimizer.weight_decay),
            ("lambda", self.lambda),
            ("mu", self.mu),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        let f = self.training.shuffle_frac;
        if !(f > 0.0 && f <= 1.0) {
            return bad(format!("shuffle_frac {f} outside (0, 1]"));
        }
        if self.training.checkpoint_window == 0 || self.training.eval_batch == 0 {
            return bad("checkpoint_window and eval_batch must be positive".into());
        }
        self.encoder.validate()?;
        self.attention.validate()?;
        if self.attention.d_model != self.encoder.embedding_dim() {
            return bad(format!(
                "attention d_model {} must equal the embedding size {}",
                self.attention.d_model,
                self.encoder.embedding_dim()
            ));
        }
        if matches!(self.data, DataSource::Synthetic) {
            self.generator.validate()?;
            if self.generator.n_channels != self.encoder.in_channels || self.generator.length != self.encoder.input_len {
                return bad("generator shape must match the encoder input".into());
            }
            if let Some(c) = self.schedule.class_ids.iter().find(|&&c| c >= self.generator.n_classes) {
                return bad(format!("class {c} is not produced by the generator"));
            }
        }
        if self.forest.n_trees == 0 {
            return bad("forest needs at least one tree".into());
        }
        self.schedule.build()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        if let DataSource::Csv { train, test } = &mut cfg.data {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [train, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

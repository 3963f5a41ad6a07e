//! Session orchestration, evaluation and reporting.

pub mod ablation;
pub mod cka;
pub mod config;
pub mod evaluate;
pub mod model;
pub mod report;
pub mod run;

pub use ablation::{ablation_rows, run_variants, Variant};
pub use cka::{cka_similarity, CkaMatrix};
pub use config::{Components, DataSource, MemoryConfig, Preset, RunConfig, TrainingOptions};
pub use evaluate::{checkpoint_average, evaluate, round2, score, table_average, Evaluation};
pub use model::{audit_stop_gradient, DualModel, Optimizers, StepGraph};
pub use report::{
    export_embeddings, load_results, render_table, report_emit, results_json, save_checkpoints, write_loss_trace,
    write_run_artifacts, EmbeddingBlock, EmbeddingManifest, TableRow,
};
pub use run::{Checkpoint, Experiment, LossRecord, RunResult, RunState, SessionReport};

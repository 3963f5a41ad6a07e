//! Signals, schedules and augmentation.

mod augment;
mod csv;
mod dataset;
mod generator;
mod sample;
mod schedule;
mod standardize;

pub use augment::{
    make_views, make_views_with, segment_len, segment_shuffle_augment, segment_shuffle_with, Views,
    DEFAULT_SHUFFLE_FRAC,
};
pub use csv::{export_csv, ingest_csv, parse_csv, render_csv};
pub use dataset::Dataset;
pub use generator::{class_signature, generate_synthetic, Component, GeneratorSpec};
pub use sample::{stack, SignalSample};
pub use schedule::{build_schedule, Budget, DatasetKind, ScheduleConfig, SessionSchedule, SessionSpec, SplitMode};
pub use standardize::Standardizer;

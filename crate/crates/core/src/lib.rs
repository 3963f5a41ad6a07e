//! Dual-granularity guidance for few-shot class-incremental fault diagnosis.

pub mod classifiers;
pub mod data;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod memory;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod rng;

pub use error::{DggnError, Result};

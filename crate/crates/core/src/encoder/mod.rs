//! Residual encoder with multi-order interaction aggregation.

mod moia;
mod resnet;
mod types;

pub use moia::{moia_forward, Moia, MoiaConfig, PaddingMode, MOIA_DILATIONS, MOIA_KERNELS};
pub use resnet::{
    gradient_of, BnMode, Encoder, EncoderCheckpoint, EncoderConfig, EncoderOutput, Role, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use types::{Embedding, FeatureMap, NORM_EPS};

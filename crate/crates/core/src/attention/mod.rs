//! Attention classifier that predicts whether a mutated input reaches a
//! critical block, and the per-seed heat maps derived from its attention
//! weights.
//!
//! Architecture: byte embedding (257 x D, PAD = 256), three same-length
//! 1-D convolutions with kernel 3 and ReLU (D -> D' -> D' -> D'), a
//! per-position attention score `u_i . w + b + m[mutator] + p * param`,
//! softmax over valid positions, attention-weighted features, and a linear
//! two-class head over the flattened D' x N features.
//!
//! The mutator and parameter terms are the same at every position and so
//! cancel inside the softmax; their gradients are zero. They are kept so
//! that the score has its full form.
//!
//! Gradients are derived by hand and checked against central finite
//! differences by [`finite_difference_check`]. Training is bitwise
//! deterministic for a given seed on a given platform; `exp` and `ln` come
//! from the platform libm, so results may differ across platforms in the
//! last bits.

mod checkpoint;
mod dataset;
mod heatmap;
mod model;
mod train;

use thiserror::Error;

use crate::mutation::MutatorId;

pub use checkpoint::{load_checkpoint, params_from_bytes, params_to_bytes, save_checkpoint, CHECKPOINT_MAGIC};
pub use dataset::{build_dataset, build_dataset_from, encode_input, DatasetOptions, DEFAULT_MAX_PER_CLASS};
pub use heatmap::{extract_heatmap, heatmap_csv, HeatMap};
pub use model::{ModelParams, ModelShape, DEFAULT_D, DEFAULT_D_PRIME, KERNEL, PAD, VOCAB};
pub use train::{accuracy, finite_difference_check, train, TrainConfig, TrainMetrics};

/// One model input: the mutated bytes padded to `N`, plus side features.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub x: Vec<u16>,
    pub mutator: MutatorId,
    pub param_norm: f64,
    pub label: u8,
    pub valid_len: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("untrainable block: {positives} positive and {negatives} negative samples")]
    Untrainable { positives: usize, negatives: usize },
    #[error("dataset too small: {0} samples, need at least 8")]
    TooSmall(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (learning rate {learning_rate}, \
         init scale 1/sqrt(fan_in), largest |param| {max_abs_param}); try a smaller learning rate"
    )]
    NonFinite { epoch: usize, batch: usize, learning_rate: f64, max_abs_param: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("parent seed {0} not found")]
    MissingSeed(u64),
}

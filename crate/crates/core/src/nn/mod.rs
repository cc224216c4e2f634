//! Multiscale message-passing surrogate: a self-contained differentiable
//! core (exact reverse-mode gradients) plus the training loop.

pub mod checkpoint;
pub mod model;
pub mod tape;
pub mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::features::FeatureError;
use crate::graphs::GraphError;
use crate::problems::ProblemVariant;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use model::{mlp_apply, model_forward, processor_block, ModelConfig, ModelParams};
pub use train::{
    cosine_lr, huber_loss, rotate_augment, rotate_sample, trace_target, train, AdamState,
    EpochStats, TrainConfig,
};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("model expects {expected} samples, dataset holds {found}")]
    VariantMismatch { expected: ProblemVariant, found: ProblemVariant },
    #[error("io error on {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

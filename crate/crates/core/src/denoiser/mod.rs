//! Graph denoising network with AdaLN conditioning, its training loop and
//! the checkpoint format that carries trained weights between commands.

mod bundle;
mod checkpoint;
mod model;
mod train;

pub use bundle::{tfe_checkpoint, tfe_from_checkpoint, ModelBundle};
pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{DenoiserConfig, DenoiserModel};
pub use train::{train_denoiser, train_step, DenoiserTrainConfig, StepLoss, TrainItem};

use crate::autodiff::AdError;
use crate::diffusion::DiffusionError;
use crate::tfe::TfeError;

#[derive(Debug, thiserror::Error)]
pub enum DenoiserError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss at step {step} (node {node}, edge {edge})")]
    NonFiniteLoss { step: u64, node: f64, edge: f64 },
    #[error("checkpoint version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Tfe(#[from] TfeError),
}

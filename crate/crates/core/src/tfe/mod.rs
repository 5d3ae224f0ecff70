//! Perturbation feature extraction: phase-stratified aggregation of cell
//! embeddings, bidirectional pre/post interaction, and the two alignment
//! views that tie the perturbation embedding to molecular space.

mod aggregate;
mod condition;
pub mod io;
mod losses;
mod model;
mod train;
mod vae;

pub use aggregate::{aggregate, phase_allocation, CellPopulation, ExpressionProfile, Phase, Resolution};
pub use condition::{condition_dropout, ConditionEmbedding, PerturbationEmbedding, Provenance};
pub use losses::{
    contrast_loss, global_loss, local_loss, regression_loss, total_loss, LossWeights,
    REGRESSION_EPS,
};
pub use model::{TfeConfig, TfeHeads, TfeModel};
pub use train::{train_tfe, TfeExample, TfeTrace, TfeTrainConfig};
pub use vae::{kl_standard, VaeOutput, VaeStub};

use crate::autodiff::AdError;

/// Number of representative vectors per single-cell profile.
pub const AGGREGATE_ROWS: usize = 128;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TfeError {
    #[error("cell population is empty")]
    EmptyPopulation,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("variances must be positive")]
    NonPositiveVariance,
    #[error("row {0} has zero norm")]
    ZeroRow(usize),
    #[error("fingerprint targets must be non-negative")]
    NegativeTarget,
    #[error("non-finite value")]
    NonFinite,
    #[error("{0}")]
    InvalidArgument(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Autodiff(AdError),
}

impl From<AdError> for TfeError {
    fn from(e: AdError) -> Self {
        match e {
            AdError::ZeroRow(r) => TfeError::ZeroRow(r),
            other => TfeError::Autodiff(other),
        }
    }
}

//! Categorical graph diffusion: schedules, forward noising, the analytic
//! posterior, classifier-free guidance and the reverse sampling loop.

mod kernel;
mod sampler;
mod schedule;
mod state;

pub use kernel::{
    cfg_combine, forward_probs, forward_sample, posterior, reverse_probs, reverse_step,
    GraphLogits,
};
pub use sampler::{
    sample, sample_molecules, sample_prior, sample_states, GraphDenoiser, SampleRequest,
    SizeHistogram, Strided,
};
pub use schedule::{
    build_schedule, cosine_alpha_bar, strided_schedule, NoiseSchedule, TransitionKind, TransitionMatrix,
    TransitionSchedule, COSINE_OFFSET,
};
pub use state::CategoricalGraphState;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffusionError {
    #[error("step count must be positive, got {0}")]
    InvalidT(usize),
    #[error("step {t} outside the valid range for T={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("posterior normalizer is zero; x_t is unreachable from x0")]
    ZeroNormalizer,
    #[error("non-finite logits or guidance scale")]
    NonFinite,
    #[error("matrix is not row-stochastic")]
    NotStochastic,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("state invariant violated at {0}")]
    Invariant(String),
    #[error("denoiser failed: {0}")]
    Model(String),
}

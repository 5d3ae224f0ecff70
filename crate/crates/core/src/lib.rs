//! Transcriptome-conditioned discrete molecular graph diffusion.

pub mod autodiff;
pub mod chem;
pub mod corpus;
pub mod denoiser;
pub mod diffusion;
pub mod molgraph;
pub mod nn;
pub mod pipeline;
pub mod screener;
pub mod seed;
pub mod splits;
pub mod synth;
pub mod tfe;

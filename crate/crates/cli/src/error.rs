use std::path::{Path, PathBuf};

use txdiff::chem::ChemError;
use txdiff::denoiser::DenoiserError;
use txdiff::diffusion::DiffusionError;
use txdiff::pipeline::PipelineError;
use txdiff::screener::ScreenError;
use txdiff::splits::SplitError;
use txdiff::tfe::TfeError;

/// Every failure maps onto one of four exit-code families.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("data: {0}")]
    Data(String),
    #[error("numerical: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Data(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<SplitError> for CliError {
    fn from(e: SplitError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ScreenError> for CliError {
    fn from(e: ScreenError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ChemError> for CliError {
    fn from(e: ChemError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TfeError> for CliError {
    fn from(e: TfeError) -> Self {
        match e {
            TfeError::NonFinite | TfeError::Autodiff(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DiffusionError> for CliError {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::NonFinite | DiffusionError::ZeroNormalizer => CliError::Numerical(e.to_string()),
            DiffusionError::InvalidT(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<DenoiserError> for CliError {
    fn from(e: DenoiserError) -> Self {
        match e {
            DenoiserError::NonFiniteLoss { .. } | DenoiserError::Autodiff(_) => CliError::Numerical(e.to_string()),
            DenoiserError::Diffusion(d) => d.into(),
            DenoiserError::Tfe(t) => t.into(),
            DenoiserError::Io(source) => CliError::Io {
                path: PathBuf::from("<checkpoint>"),
                source,
            },
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Tfe(t) => t.into(),
            PipelineError::Denoiser(d) => d.into(),
            PipelineError::Diffusion(d) => d.into(),
            PipelineError::Width { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

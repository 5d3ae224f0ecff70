//! Run configuration. A TOML file with one table per module; every key has a
//! default taken from the owning module, and unknown keys are rejected.
//! Command-line flags override the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use txdiff::denoiser::{DenoiserConfig, DenoiserTrainConfig};
use txdiff::pipeline::{AtomCount, KernelChoice};
use txdiff::splits::DEFAULT_TRIVIAL_MAX_ATOMS;
use txdiff::tfe::{LossWeights, TfeConfig, TfeTrainConfig, AGGREGATE_ROWS};

use crate::error::CliError;

/// Training chain length.
pub const DEFAULT_T: usize = 500;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub diffusion: DiffusionSection,
    pub tfe: TfeSection,
    pub denoiser: DenoiserSection,
    pub sample: SampleSection,
    pub split: SplitSection,
    pub screen: ScreenSection,
    pub sweep: SweepSection,
}

/// Default input and output locations; flags take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub tfe: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub train: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    /// Chain length T.
    pub steps: usize,
    pub kernel: KernelChoice,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        DiffusionSection {
            steps: DEFAULT_T,
            kernel: KernelChoice::Uniform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TfeSection {
    /// Representative rows per aggregated profile (N).
    pub rows: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub d_z: usize,
    pub vae_hidden: usize,
    pub latent: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub lambda_kl: f64,
    pub tau: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for TfeSection {
    fn default() -> Self {
        let m = TfeConfig::default();
        let t = TfeTrainConfig::default();
        TfeSection {
            rows: AGGREGATE_ROWS,
            d_model: m.d_model,
            heads: m.heads,
            blocks: m.blocks,
            d_z: m.d_z,
            vae_hidden: m.vae_hidden,
            latent: m.latent,
            train_steps: t.steps,
            batch_size: t.batch,
            learning_rate: t.lr,
            gamma: t.weights.gamma,
            lambda_kl: t.weights.lambda_kl,
            tau: t.weights.tau,
            lambda: t.weights.lambda,
            alpha: t.weights.alpha,
        }
    }
}

impl TfeSection {
    /// Architecture for inputs of width `d_in`.
    pub fn model(&self, d_in: usize) -> TfeConfig {
        TfeConfig {
            d_in,
            d_model: self.d_model,
            heads: self.heads,
            blocks: self.blocks,
            d_z: self.d_z,
            vae_hidden: self.vae_hidden,
            latent: self.latent,
            ..TfeConfig::default()
        }
    }

    pub fn train(&self) -> TfeTrainConfig {
        TfeTrainConfig {
            steps: self.train_steps,
            batch: self.batch_size,
            lr: self.learning_rate,
            weights: LossWeights {
                gamma: self.gamma,
                lambda_kl: self.lambda_kl,
                tau: self.tau,
                lambda: self.lambda,
                alpha: self.alpha,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserSection {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub d_edge: usize,
    pub ff_hidden: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Condition dropout probability p.
    pub p_uncond: f64,
    pub noise_sigma: f64,
    pub cosine_decay: bool,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        let m = DenoiserConfig::default();
        let t = DenoiserTrainConfig::default();
        DenoiserSection {
            d_model: m.d_model,
            blocks: m.blocks,
            heads: m.heads,
            d_edge: m.d_edge,
            ff_hidden: m.ff_hidden,
            train_steps: t.steps,
            batch_size: t.batch,
            learning_rate: t.lr,
            p_uncond: t.p_uncond,
            noise_sigma: t.noise_sigma,
            cosine_decay: t.cosine_decay,
        }
    }
}

impl DenoiserSection {
    pub fn model(&self, d_z: usize) -> DenoiserConfig {
        DenoiserConfig {
            d_model: self.d_model,
            blocks: self.blocks,
            heads: self.heads,
            d_edge: self.d_edge,
            ff_hidden: self.ff_hidden,
            d_z,
        }
    }

    pub fn train(&self) -> DenoiserTrainConfig {
        DenoiserTrainConfig {
            steps: self.train_steps,
            batch: self.batch_size,
            lr: self.learning_rate,
            p_uncond: self.p_uncond,
            noise_sigma: self.noise_sigma,
            cosine_decay: self.cosine_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    /// Guidance scale s; 1 samples the conditional model as is.
    pub guidance_scale: f64,
    pub num_samples: usize,
    /// Reverse steps; absent means the full training chain.
    pub steps: Option<usize>,
    /// `histogram` or `fixed:N`.
    pub num_atoms_from: String,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection {
            guidance_scale: 1.0,
            num_samples: 100,
            steps: None,
            num_atoms_from: "histogram".into(),
        }
    }
}

impl SampleSection {
    pub fn atoms(&self) -> Result<AtomCount, CliError> {
        self.num_atoms_from.parse().map_err(CliError::Config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub trivial_max_atoms: usize,
    pub held_out_tissues: Vec<String>,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            trivial_max_atoms: DEFAULT_TRIVIAL_MAX_ATOMS,
            held_out_tissues: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreenSection {
    pub top_k: usize,
    pub ks: Vec<usize>,
}

impl Default for ScreenSection {
    fn default() -> Self {
        ScreenSection {
            top_k: 10,
            ks: vec![5, 10, 15, 20],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub scales: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            scales: vec![0.0, 1.0, 2.0, 3.0, 5.0],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Default shown in `--help` for each flag id; the same values the config
/// falls back to.
pub fn flag_default(id: &str) -> Option<String> {
    let c = RunConfig::default();
    Some(match id {
        "seed" => c.seed.to_string(),
        "diffusion_steps" => c.diffusion.steps.to_string(),
        "kernel" => "uniform".into(),
        "train_steps" => "tfe 200, denoiser 2000".into(),
        "batch_size" => c.denoiser.batch_size.to_string(),
        "lr" => format!("{:e}", c.denoiser.learning_rate),
        "rows" => c.tfe.rows.to_string(),
        "gamma" => c.tfe.gamma.to_string(),
        "p_uncond" => c.denoiser.p_uncond.to_string(),
        "noise_sigma" => c.denoiser.noise_sigma.to_string(),
        "guidance_scale" => c.sample.guidance_scale.to_string(),
        "num_samples" => c.sample.num_samples.to_string(),
        "steps" => "training T".into(),
        "num_atoms_from" => c.sample.num_atoms_from,
        "trivial_max_atoms" => c.split.trivial_max_atoms.to_string(),
        "held_out" => "none".into(),
        "top_k" => c.screen.top_k.to_string(),
        "ks" => join(&c.screen.ks),
        "scales" => join(&c.sweep.scales),
        _ => return None,
    })
}

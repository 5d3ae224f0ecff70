//! Glue from raw pairs to a trained bundle: aggregate populations, train
//! the TFE, freeze it, embed every pair, then train the denoiser on the
//! frozen embeddings. Also the conditioned-sampling evaluation used by the
//! guidance sweep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chem::{morgan_fingerprint, tanimoto_counts, Fingerprint, DEFAULT_RADIUS, FINGERPRINT_BITS};
use crate::denoiser::{train_denoiser, DenoiserConfig, DenoiserError, DenoiserModel, DenoiserTrainConfig, ModelBundle, StepLoss, TrainItem};
use crate::diffusion::{
    build_schedule, sample_molecules, strided_schedule, DiffusionError, SampleRequest, SizeHistogram, Strided, TransitionKind,
};
use crate::molgraph::{check_valence, largest_component, parse_smiles, write_smiles, Element, MolecularGraph, EDGE_CATEGORIES};
use crate::seed::{derive_indexed, derive_seed};
use crate::tfe::{aggregate, train_tfe, CellPopulation, ExpressionProfile, TfeConfig, TfeError, TfeExample, TfeModel, TfeTrace, TfeTrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("pair {0}: target SMILES is not a valid molecule")]
    BadTarget(String),
    #[error("no training pairs")]
    Empty,
    #[error("condition width {found} does not match the denoiser's {expected}")]
    Width { found: usize, expected: usize },
    #[error(transparent)]
    Tfe(#[from] TfeError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// Which forward kernel the denoiser is trained against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    Uniform,
    /// Stationary law from training-set category frequencies.
    Marginal,
}

/// One perturbation: pre and post populations and the molecule applied.
#[derive(Clone, Debug)]
pub struct PerturbationPair {
    pub id: String,
    pub pre: CellPopulation,
    pub post: CellPopulation,
    pub smiles: String,
}

/// Aggregates both populations to `rows` vectors and attaches the
/// target's count fingerprint. Row sampling uses one stream per pair.
pub fn tfe_examples(pairs: &[PerturbationPair], rows: usize, seed: u64) -> Result<Vec<TfeExample>, PipelineError> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = parse_smiles(&p.smiles).map_err(|_| PipelineError::BadTarget(p.id.clone()))?;
            let fp = morgan_fingerprint(&g, DEFAULT_RADIUS, FINGERPRINT_BITS).map_err(|_| PipelineError::BadTarget(p.id.clone()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, "aggregate", i as u64));
            Ok(TfeExample {
                pre: aggregate(&p.pre, rows, &mut rng)?,
                post: aggregate(&p.post, rows, &mut rng)?,
                fingerprint: fp.to_f64(),
                label: write_smiles(&g),
            })
        })
        .collect()
}

pub fn fit_tfe(examples: &[TfeExample], cfg: TfeConfig, train: &TfeTrainConfig, seed: u64) -> Result<(TfeModel, TfeTrace), PipelineError> {
    let mut model = TfeModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "tfe.init")));
    let trace = train_tfe(&mut model, examples, train, derive_seed(seed, "tfe.train"))?;
    Ok((model, trace))
}

/// Embeddings of the frozen TFE for each example.
pub fn embed_examples(tfe: &TfeModel, examples: &[TfeExample]) -> Result<Vec<Vec<f64>>, PipelineError> {
    let pairs: Vec<(&ExpressionProfile, &ExpressionProfile)> = examples.iter().map(|e| (&e.pre, &e.post)).collect();
    Ok(tfe.embed(&pairs)?)
}

/// Settings for [`fit_denoiser`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionSetup {
    pub steps: usize,
    pub kernel: KernelChoice,
    pub model: DenoiserConfig,
    pub train: DenoiserTrainConfig,
}

/// Trains a denoiser on molecules paired with frozen conditions and packs
/// the result (with the TFE, if given) into a bundle.
pub fn fit_denoiser(
    graphs: &[MolecularGraph],
    conditions: &[Vec<f64>],
    setup: &DiffusionSetup,
    tfe: Option<TfeModel>,
    seed: u64,
    on_step: impl FnMut(usize, &StepLoss),
) -> Result<ModelBundle, PipelineError> {
    if graphs.is_empty() {
        return Err(PipelineError::Empty);
    }
    if let Some(z) = conditions.iter().find(|z| z.len() != setup.model.d_z) {
        return Err(PipelineError::Width {
            found: z.len(),
            expected: setup.model.d_z,
        });
    }
    let kind = match setup.kernel {
        KernelChoice::Uniform => TransitionKind::Uniform,
        KernelChoice::Marginal => TransitionKind::marginal_from(graphs),
    };
    let schedule = build_schedule(setup.steps, kind, Element::COUNT, EDGE_CATEGORIES)?;
    let items: Vec<TrainItem> = graphs.iter().zip(conditions).map(|(g, z)| TrainItem::new(g, z.clone())).collect();
    let mut denoiser = DenoiserModel::new(setup.model, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "denoiser.init")));
    train_denoiser(&mut denoiser, &items, &schedule, &setup.train, derive_seed(seed, "denoiser.train"), on_step)?;
    Ok(ModelBundle {
        schedule,
        denoiser,
        tfe,
        sizes: SizeHistogram::from_sizes(graphs.iter().map(MolecularGraph::atom_count)),
        step: setup.train.steps as u64,
        seed,
    })
}

/// Where sampled molecules get their atom counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtomCount {
    /// Drawn from the training-set size histogram.
    Histogram,
    Fixed(usize),
}

impl std::str::FromStr for AtomCount {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "histogram" {
            return Ok(AtomCount::Histogram);
        }
        match s.strip_prefix("fixed:").map(str::parse::<usize>) {
            Some(Ok(n)) if n > 0 => Ok(AtomCount::Fixed(n)),
            _ => Err(format!("expected histogram or fixed:N with N > 0, got {s:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOptions {
    pub n: usize,
    pub guidance: f64,
    pub seed: u64,
    /// Reverse steps; `None` walks the full training chain.
    pub steps: Option<usize>,
    pub atoms: AtomCount,
}

/// Draws `n` molecules with histogram sizes over the full chain.
pub fn sample_bundle(bundle: &ModelBundle, conditions: &[Vec<f64>], n: usize, s: f64, seed: u64) -> Result<Vec<MolecularGraph>, PipelineError> {
    let opts = SampleOptions {
        n,
        guidance: s,
        seed,
        steps: None,
        atoms: AtomCount::Histogram,
    };
    sample_bundle_with(bundle, conditions, &opts)
}

/// Request `i` is conditioned on `conditions[i % len]` (none if empty).
pub fn sample_bundle_with(bundle: &ModelBundle, conditions: &[Vec<f64>], opts: &SampleOptions) -> Result<Vec<MolecularGraph>, PipelineError> {
    let expected = bundle.denoiser.config().d_z;
    if let Some(z) = conditions.iter().find(|z| z.len() != expected) {
        return Err(PipelineError::Width { found: z.len(), expected });
    }
    let mut size_rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, "sample.sizes"));
    let requests: Vec<SampleRequest> = (0..opts.n)
        .map(|i| SampleRequest {
            n_atoms: match opts.atoms {
                AtomCount::Histogram => bundle.sizes.sample(&mut size_rng).unwrap_or(1),
                AtomCount::Fixed(n) => n,
            },
            condition: (!conditions.is_empty()).then(|| conditions[i % conditions.len()].clone()),
            seed: derive_indexed(opts.seed, "sample.item", i as u64),
        })
        .collect();
    let out = match opts.steps {
        Some(m) if m != bundle.schedule.steps() => {
            let (coarse, map) = strided_schedule(&bundle.schedule, m)?;
            let view = Strided { inner: &bundle.denoiser, map };
            sample_molecules(&coarse, &view, &requests, opts.guidance)?
        }
        _ => sample_molecules(&bundle.schedule, &bundle.denoiser, &requests, opts.guidance)?,
    };
    Ok(out)
}

/// Fingerprint of a generated graph's largest component, if it passes the
/// valence table.
pub fn sample_fingerprint(g: &MolecularGraph) -> Option<Fingerprint> {
    if g.is_empty() {
        return None;
    }
    let comp = largest_component(g);
    check_valence(&comp).ok()?;
    morgan_fingerprint(&comp, DEFAULT_RADIUS, FINGERPRINT_BITS).ok()
}

/// Mean over samples of the best Tanimoto to any target molecule. Samples
/// without a usable fingerprint score 0.
pub fn similarity_to_set(samples: &[MolecularGraph], targets: &[Fingerprint]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let total: f64 = samples
        .iter()
        .map(|g| match sample_fingerprint(g) {
            Some(fp) => targets.iter().filter_map(|t| tanimoto_counts(&fp, t).ok()).fold(0.0, f64::max),
            None => 0.0,
        })
        .sum();
    total / samples.len() as f64
}

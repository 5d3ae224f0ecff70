//! `txdiff`: corpus validation, dataset splits, fingerprints, TFE and
//! denoiser training, sampling, screening and metric reports.
//!
//! Reports go to stdout (or `--out`); logs are JSON lines on stderr.

mod commands;
mod config;
mod error;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgMatches, Args, Command, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::{flag_default, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "txdiff", version, about = "Transcriptome-conditioned molecular graph diffusion toolkit")]
pub struct Cli {
    /// Run configuration (TOML); flags override its values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Root seed; every subsystem derives its own stream from it
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Parse a SMILES corpus and report parse and validity rates
    Validate(ValidateArgs),
    /// Partition a dataset index, or audit a partition for leakage
    #[command(subcommand)]
    Split(SplitCmd),
    /// Fingerprint files
    #[command(subcommand)]
    Fp(FpCmd),
    /// Train the transcriptome feature extractor on a pair manifest
    TrainTfe(TrainTfeArgs),
    /// Train the graph denoiser, conditioned on a frozen TFE or unconditioned
    TrainDiffusion(TrainDiffusionArgs),
    /// Draw molecules from a trained model
    Sample(SampleArgs),
    /// Fingerprint database screening
    #[command(subcommand)]
    Screen(ScreenCmd),
    /// Metric report for a set of generated molecules
    EvalMetrics(EvalMetricsArgs),
    /// Sample and score across guidance scales
    CfgSweep(CfgSweepArgs),
    /// Write a synthetic dataset in the formats every command reads
    Synth(SynthArgs),
    /// Print the effective configuration
    Config,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// SMILES corpus (`SMILES [id]` per line)
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitIo {
    /// Dataset index with header id,smiles,cell_line,tissue,tumor_type
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Where to write the `id,partition` table
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum SplitCmd {
    /// Shuffled 85:10:5 split
    Random(SplitIo),
    /// Bemis-Murcko scaffold clusters assigned whole
    Scaffold {
        #[command(flatten)]
        io: SplitIo,
        /// Scaffolds up to this many heavy atoms are trivial (train only, downsampled)
        #[arg(long)]
        trivial_max_atoms: Option<usize>,
    },
    /// Held-out tissues to test; remaining cell lines 89:11 train:val
    Cell {
        #[command(flatten)]
        io: SplitIo,
        /// Comma-separated tissues held out for test
        #[arg(long = "held-out", value_delimiter = ',')]
        held_out: Option<Vec<String>>,
    },
    /// Count cross-partition overlap; exits 4 on FAIL
    Audit {
        #[arg(long)]
        index: Option<PathBuf>,
        /// Assignment produced by `split`
        #[arg(long)]
        split: PathBuf,
        /// random, scaffold or cell; decides the guarded axes
        #[arg(long)]
        protocol: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum FpCmd {
    /// Sparse count fingerprints, one molecule per line
    Build {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = txdiff::chem::DEFAULT_RADIUS)]
        radius: usize,
        #[arg(long, default_value_t = txdiff::chem::FINGERPRINT_BITS)]
        bits: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct TrainTfeArgs {
    /// Pair manifest: pair_id,pre_file,post_file,target_smiles
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Checkpoint to write
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Representative rows per aggregated profile
    #[arg(long)]
    pub rows: Option<usize>,
    /// Weight of the local alignment loss
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainDiffusionArgs {
    /// Pair manifest; conditions come from the frozen TFE
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// TFE checkpoint from `train-tfe`
    #[arg(long)]
    pub tfe: Option<PathBuf>,
    /// Train unconditioned on a SMILES corpus instead of a manifest
    #[arg(long, conflicts_with_all = ["manifest", "tfe"])]
    pub corpus: Option<PathBuf>,
    /// Checkpoint to write
    #[arg(long)]
    pub out: PathBuf,
    /// Chain length T
    #[arg(long)]
    pub diffusion_steps: Option<usize>,
    /// uniform or marginal
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Condition dropout probability
    #[arg(long)]
    pub p_uncond: Option<f64>,
    /// Gaussian noise added to conditions
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct SamplingFlags {
    /// Reverse steps, evenly strided over the training chain
    #[arg(long)]
    pub steps: Option<usize>,
    /// Molecules to draw
    #[arg(long)]
    pub num_samples: Option<usize>,
    /// histogram or fixed:N
    #[arg(long)]
    pub num_atoms_from: Option<String>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Model checkpoint from `train-diffusion`
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Condition on the pairs of this manifest (cycled); unconditioned if absent
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Restrict conditioning to one pair id
    #[arg(long, requires = "manifest")]
    pub pair: Option<String>,
    /// Classifier-free guidance scale s
    #[arg(long)]
    pub guidance_scale: Option<f64>,
    #[command(flatten)]
    pub sampling: SamplingFlags,
    /// SMILES file to write
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum ScreenCmd {
    /// Fingerprint a corpus into an FPDB file
    Build {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-K neighbours of a SMILES or of TFE projections
    Query {
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["tfe", "manifest"])]
        smiles: Option<String>,
        /// TFE checkpoint whose projections are the queries
        #[arg(long, requires = "manifest")]
        tfe: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hit rate and mean similarity of TFE projections against their targets
    Eval {
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        tfe: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct EvalMetricsArgs {
    /// Generated SMILES
    #[arg(long)]
    pub generated: PathBuf,
    /// Reference SMILES for similarity
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Training SMILES for scaffold novelty
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Compare generated line i with reference line i instead of best match
    #[arg(long)]
    pub paired: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CfgSweepArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Pairs to condition on; each sample is scored against its pair's target
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Training SMILES for scaffold novelty
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Comma-separated guidance scales
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    #[command(flatten)]
    pub sampling: SamplingFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory to create
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub molecules: usize,
    /// Pairs per structural family
    #[arg(long, default_value_t = 24)]
    pub pairs: usize,
    /// Width of the cell embeddings
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Cells per population
    #[arg(long, default_value_t = 40)]
    pub cells: usize,
}

/// Appends `[default: ..]` to every flag whose default lives in the config.
fn annotate(cmd: Command) -> Command {
    let ids: Vec<String> = cmd.get_arguments().map(|a| a.get_id().to_string()).collect();
    let mut cmd = ids.into_iter().fold(cmd, |cmd, id| match flag_default(&id) {
        Some(d) => cmd.mut_arg(id, |a| {
            let help = a.get_help().map(ToString::to_string).unwrap_or_default();
            a.help(format!("{help} [default: {d}]").trim_start().to_string())
        }),
        None => cmd,
    });
    let subs: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for name in subs {
        cmd = cmd.mut_subcommand(name, annotate);
    }
    cmd
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, rec| {
            let line = serde_json::json!({
                "level": rec.level().as_str(),
                "target": rec.target(),
                "msg": rec.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .init();
}

fn run(matches: &ArgMatches) -> Result<(), CliError> {
    let cli = Cli::from_arg_matches(matches).map_err(|e| CliError::Config(e.to_string()))?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    commands::dispatch(cli.command, cfg)
}

fn main() -> ExitCode {
    let matches = annotate(Cli::command()).get_matches();
    init_logging();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_is_well_formed() {
        annotate(Cli::command()).debug_assert();
    }

    #[test]
    fn help_lists_defaults() {
        let mut cmd = annotate(Cli::command());
        let sample = cmd.find_subcommand_mut("sample").unwrap();
        let help = sample.render_long_help().to_string();
        for want in ["[default: 1]", "[default: 100]", "[default: histogram]", "[default: training T]"] {
            assert!(help.contains(want), "missing {want} in\n{help}");
        }
    }
}

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use txdiff::chem::{bemis_murcko, metric_suite_with, morgan_fingerprint, MetricReport, Pairing, Scaffold};
use txdiff::corpus::{read_smiles_lines, write_smiles_lines};
use txdiff::denoiser::{tfe_checkpoint, tfe_from_checkpoint, Checkpoint, ModelBundle};
use txdiff::molgraph::{check_valence, is_valid, largest_component, parse_smiles, write_smiles, MolecularGraph};
use txdiff::pipeline::{
    embed_examples, fit_denoiser, fit_tfe, sample_bundle_with, tfe_examples, DiffusionSetup, KernelChoice,
    PerturbationPair, SampleOptions,
};
use txdiff::screener::{build_db, screen_eval, FingerprintDb};
use txdiff::splits::{cell_split, leakage_audit, random_split, scaffold_split, DatasetIndex, Protocol, SplitAssignment};
use txdiff::synth::{fixture_corpus, fixture_index, two_cluster_task};
use txdiff::tfe::io::{parse_manifest, parse_population, write_population};
use txdiff::tfe::{TfeExample, TfeModel};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{CfgSweepArgs, Cmd, EvalMetricsArgs, FpCmd, SampleArgs, SamplingFlags, ScreenCmd, SplitCmd, SynthArgs};
use crate::{TrainDiffusionArgs, TrainTfeArgs, ValidateArgs};

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(cmd: Cmd, cfg: RunConfig) -> Result<()> {
    match cmd {
        Cmd::Validate(a) => validate(&cfg, a),
        Cmd::Split(s) => split(&cfg, s),
        Cmd::Fp(FpCmd::Build { corpus, radius, bits, out }) => fp_build(&cfg, corpus, radius, bits, out),
        Cmd::TrainTfe(a) => train_tfe(&cfg, a),
        Cmd::TrainDiffusion(a) => train_diffusion(&cfg, a),
        Cmd::Sample(a) => sample(&cfg, a),
        Cmd::Screen(s) => screen(&cfg, s),
        Cmd::EvalMetrics(a) => eval_metrics(a),
        Cmd::CfgSweep(a) => cfg_sweep(&cfg, a),
        Cmd::Synth(a) => synth(&cfg, a),
        Cmd::Config => emit(None, &cfg.to_toml()),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Report text to `--out` or stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Flag, else config path, else a config error naming the flag.
fn need(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Config(format!("--{name} is required (or set paths.{name})")))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    Ok(ModelBundle::from_checkpoint(&load_checkpoint(path)?)?)
}

fn load_pairs(manifest: &Path) -> Result<Vec<PerturbationPair>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&read(manifest)?, base)?;
    if entries.is_empty() {
        return Err(CliError::Data(format!("{}: no pairs", manifest.display())));
    }
    entries
        .into_iter()
        .map(|e| {
            let pop = |p: &Path| -> Result<_> {
                parse_population(&read(p)?).map_err(|err| CliError::Data(format!("{}: {err}", p.display())))
            };
            Ok(PerturbationPair {
                pre: pop(&e.pre_file)?,
                post: pop(&e.post_file)?,
                id: e.pair_id,
                smiles: e.target_smiles,
            })
        })
        .collect()
}

fn load_graphs(path: &Path) -> Result<Vec<MolecularGraph>> {
    Ok(read_smiles_lines(&read(path)?)
        .into_iter()
        .filter_map(|r| match parse_smiles(&r.smiles) {
            Ok(g) => Some(g),
            Err(e) => {
                log::warn!("{}:{}: skipping {}: {e}", path.display(), r.line, r.id);
                None
            }
        })
        .collect())
}

/// Pair examples and their frozen embeddings.
fn embed_pairs(cfg: &RunConfig, tfe: &TfeModel, pairs: &[PerturbationPair]) -> Result<(Vec<TfeExample>, Vec<Vec<f64>>)> {
    let examples = tfe_examples(pairs, cfg.tfe.rows, cfg.seed)?;
    let zs = embed_examples(tfe, &examples)?;
    Ok((examples, zs))
}

fn validate(cfg: &RunConfig, a: ValidateArgs) -> Result<()> {
    let path = need(a.corpus, &cfg.paths.corpus, "corpus")?;
    let records = read_smiles_lines(&read(&path)?);
    if records.is_empty() {
        return Err(CliError::Data(format!("{}: no records", path.display())));
    }
    let (mut parsed, mut valid) = (0usize, 0usize);
    let mut canon = BTreeSet::new();
    for r in &records {
        match parse_smiles(&r.smiles) {
            Ok(g) => {
                parsed += 1;
                match check_valence(&g) {
                    Ok(()) => valid += 1,
                    Err(atom) => log::warn!("line {} ({}): atom {atom} exceeds its valence", r.line, r.id),
                }
                canon.insert(write_smiles(&g));
            }
            Err(e) => log::warn!("line {} ({}): {e}", r.line, r.id),
        }
    }
    let n = records.len() as f64;
    let report = format!(
        "records = {}\nparsed = {parsed}\nvalence_ok = {valid}\ndistinct = {}\nparse_rate = {:.6}\nvalence_rate = {:.6}\n",
        records.len(),
        canon.len(),
        parsed as f64 / n,
        valid as f64 / n,
    );
    emit(a.out.as_deref(), &report)
}

fn split(cfg: &RunConfig, cmd: SplitCmd) -> Result<()> {
    let load_index = |p: Option<PathBuf>| -> Result<DatasetIndex> {
        let path = need(p, &cfg.paths.index, "index")?;
        Ok(DatasetIndex::parse(&read(&path)?)?)
    };
    let (assignment, out) = match cmd {
        SplitCmd::Random(io) => (random_split(&load_index(io.index)?, cfg.seed)?, io.out),
        SplitCmd::Scaffold { io, trivial_max_atoms } => {
            let ds = load_index(io.index)?;
            let r = scaffold_split(&ds, cfg.seed, trivial_max_atoms.unwrap_or(cfg.split.trivial_max_atoms))?;
            r.warnings.iter().for_each(|w| log::warn!("{w}"));
            (r.assignment, io.out)
        }
        SplitCmd::Cell { io, held_out } => {
            let held: BTreeSet<String> = held_out.unwrap_or_else(|| cfg.split.held_out_tissues.clone()).into_iter().collect();
            (cell_split(&load_index(io.index)?, &held)?, io.out)
        }
        SplitCmd::Audit { index, split, protocol, out } => {
            let ds = load_index(index)?;
            let assignment = SplitAssignment::parse(&read(&split)?)?;
            let protocol: Protocol = protocol.parse().map_err(CliError::Config)?;
            let report = leakage_audit(&ds, &assignment, protocol)?;
            emit(out.as_deref(), &format!("{report}\n"))?;
            return if report.pass {
                Ok(())
            } else {
                Err(CliError::Data(format!("leakage audit failed on {} records", report.offending.len())))
            };
        }
    };
    let [train, val, test] = assignment.counts();
    log::info!("split train {train} val {val} test {test} excluded {}", assignment.len() - train - val - test);
    emit(out.as_deref(), &assignment.to_text())
}

fn fp_build(cfg: &RunConfig, corpus: Option<PathBuf>, radius: usize, bits: usize, out: Option<PathBuf>) -> Result<()> {
    let path = need(corpus, &cfg.paths.corpus, "corpus")?;
    let mut text = String::new();
    for r in read_smiles_lines(&read(&path)?) {
        let fp = parse_smiles(&r.smiles)
            .map_err(|e| e.to_string())
            .and_then(|g| Ok((write_smiles(&g), morgan_fingerprint(&g, radius, bits).map_err(|e| e.to_string())?)));
        match fp {
            Ok((canon, fp)) => {
                let entries: Vec<String> = fp.nonzero().map(|(i, c)| format!("{i}:{c}")).collect();
                let _ = writeln!(text, "{}\t{canon}\t{}", r.id, entries.join(" "));
            }
            Err(e) => log::warn!("line {} ({}): {e}", r.line, r.id),
        }
    }
    emit(out.as_deref(), &text)
}

fn train_tfe(cfg: &RunConfig, a: TrainTfeArgs) -> Result<()> {
    let manifest = need(a.manifest, &cfg.paths.manifest, "manifest")?;
    let mut sec = cfg.tfe.clone();
    sec.train_steps = a.train_steps.unwrap_or(sec.train_steps);
    sec.batch_size = a.batch_size.unwrap_or(sec.batch_size);
    sec.learning_rate = a.lr.unwrap_or(sec.learning_rate);
    sec.rows = a.rows.unwrap_or(sec.rows);
    sec.gamma = a.gamma.unwrap_or(sec.gamma);
    let pairs = load_pairs(&manifest)?;
    let examples = tfe_examples(&pairs, sec.rows, cfg.seed)?;
    let model_cfg = sec.model(examples[0].pre.dim());
    log::info!("training TFE on {} pairs for {} steps", examples.len(), sec.train_steps);
    let (model, trace) = fit_tfe(&examples, model_cfg, &sec.train(), cfg.seed)?;
    let every = (sec.train_steps / 10).max(1);
    for (i, ((t, g), l)) in trace.total.iter().zip(&trace.global).zip(&trace.local).enumerate() {
        if i % every == 0 || i + 1 == trace.total.len() {
            log::info!("tfe step {i} total {t:.6} global {g:.6} local {l:.6}");
        }
    }
    let bytes = tfe_checkpoint(&model, sec.train_steps as u64, cfg.seed).to_bytes()?;
    write(&a.out, bytes)
}

fn train_diffusion(cfg: &RunConfig, a: TrainDiffusionArgs) -> Result<()> {
    let mut den = cfg.denoiser.clone();
    den.train_steps = a.train_steps.unwrap_or(den.train_steps);
    den.batch_size = a.batch_size.unwrap_or(den.batch_size);
    den.learning_rate = a.lr.unwrap_or(den.learning_rate);
    den.p_uncond = a.p_uncond.unwrap_or(den.p_uncond);
    den.noise_sigma = a.noise_sigma.unwrap_or(den.noise_sigma);
    let kernel = match a.kernel.as_deref() {
        None => cfg.diffusion.kernel,
        Some("uniform") => KernelChoice::Uniform,
        Some("marginal") => KernelChoice::Marginal,
        Some(k) => return Err(CliError::Config(format!("unknown kernel {k:?}"))),
    };
    let (graphs, conditions, tfe) = match a.corpus {
        Some(corpus) => {
            let graphs: Vec<MolecularGraph> = load_graphs(&corpus)?.into_iter().filter(is_valid).collect();
            let zeros = vec![vec![0.0; cfg.tfe.d_z]; graphs.len()];
            (graphs, zeros, None)
        }
        None => {
            let manifest = need(a.manifest, &cfg.paths.manifest, "manifest")?;
            let tfe = tfe_from_checkpoint(&load_checkpoint(&need(a.tfe, &cfg.paths.tfe, "tfe")?)?)?;
            let pairs = load_pairs(&manifest)?;
            let (_, zs) = embed_pairs(cfg, &tfe, &pairs)?;
            let graphs = pairs
                .iter()
                .map(|p| parse_smiles(&p.smiles).map_err(|e| CliError::Data(format!("pair {}: {e}", p.id))))
                .collect::<Result<Vec<_>>>()?;
            (graphs, zs, Some(tfe))
        }
    };
    let d_z = tfe.as_ref().map_or(cfg.tfe.d_z, |t| t.config().d_z);
    let setup = DiffusionSetup {
        steps: a.diffusion_steps.unwrap_or(cfg.diffusion.steps),
        kernel,
        model: den.model(d_z),
        train: den.train(),
    };
    log::info!("training denoiser on {} molecules for {} steps, T={}", graphs.len(), den.train_steps, setup.steps);
    let every = (den.train_steps / 20).max(1);
    let bundle = fit_denoiser(&graphs, &conditions, &setup, tfe, cfg.seed, |i, l| {
        if i % every == 0 {
            log::info!("denoiser step {i} loss {:.6} node {:.6} edge {:.6}", l.total, l.node, l.edge);
        }
    })?;
    write(&a.out, bundle.to_checkpoint().to_bytes()?)
}

fn sample_options(cfg: &RunConfig, flags: &SamplingFlags, guidance: f64) -> Result<SampleOptions> {
    let mut sec = cfg.sample.clone();
    if let Some(a) = &flags.num_atoms_from {
        sec.num_atoms_from = a.clone();
    }
    Ok(SampleOptions {
        n: flags.num_samples.unwrap_or(sec.num_samples),
        guidance,
        seed: cfg.seed,
        steps: flags.steps.or(sec.steps),
        atoms: sec.atoms()?,
    })
}

/// Conditioning pairs for sampling, with their embeddings.
fn conditions(cfg: &RunConfig, bundle: &ModelBundle, manifest: &Path, only: Option<&str>) -> Result<(Vec<PerturbationPair>, Vec<Vec<f64>>)> {
    let tfe = bundle
        .tfe
        .as_ref()
        .ok_or_else(|| CliError::Config("the model was trained without a TFE and cannot be conditioned".into()))?;
    let mut pairs = load_pairs(manifest)?;
    if let Some(id) = only {
        pairs.retain(|p| p.id == id);
        if pairs.is_empty() {
            return Err(CliError::Data(format!("pair {id} is not in the manifest")));
        }
    }
    let (_, zs) = embed_pairs(cfg, tfe, &pairs)?;
    Ok((pairs, zs))
}

fn sample(cfg: &RunConfig, a: SampleArgs) -> Result<()> {
    let bundle = load_bundle(&need(a.model, &cfg.paths.model, "model")?)?;
    let opts = sample_options(cfg, &a.sampling, a.guidance_scale.unwrap_or(cfg.sample.guidance_scale))?;
    let (pairs, zs) = match &a.manifest {
        Some(m) => conditions(cfg, &bundle, m, a.pair.as_deref())?,
        None => (Vec::new(), Vec::new()),
    };
    let graphs = sample_bundle_with(&bundle, &zs, &opts)?;
    let ids: Vec<String> = (0..graphs.len())
        .map(|i| match pairs.get(i % pairs.len().max(1)) {
            Some(p) => format!("{}:{i}", p.id),
            None => format!("sample{i}"),
        })
        .collect();
    let smiles: Vec<String> = graphs.iter().map(write_smiles).collect();
    let valid = graphs.iter().filter(|g| is_valid(g)).count();
    log::info!("sampled {} molecules, {valid} valid, s={}", graphs.len(), opts.guidance);
    emit(a.out.as_deref(), &write_smiles_lines(ids.iter().map(String::as_str).zip(smiles.iter().map(String::as_str))))
}

fn screen(cfg: &RunConfig, cmd: ScreenCmd) -> Result<()> {
    let load_db = |p: Option<PathBuf>| -> Result<FingerprintDb> {
        let path = need(p, &cfg.paths.db, "db")?;
        let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(FingerprintDb::from_bytes(&bytes)?)
    };
    match cmd {
        ScreenCmd::Build { corpus, out } => {
            let path = need(corpus, &cfg.paths.corpus, "corpus")?;
            let (db, rep) = build_db(&read(&path)?)?;
            write(&out, db.to_bytes())?;
            emit(
                None,
                &format!(
                    "lines = {}\nrecords = {}\nunparsable = {}\nduplicates = {}\n",
                    rep.lines, rep.records, rep.unparsable, rep.duplicates
                ),
            )
        }
        ScreenCmd::Query { db, smiles, tfe, manifest, top_k, out } => {
            let db = load_db(db)?;
            let k = top_k.unwrap_or(cfg.screen.top_k);
            let queries: Vec<(String, Vec<f64>)> = match (smiles, tfe) {
                (Some(s), _) => {
                    let g = parse_smiles(&s).map_err(|e| CliError::Data(format!("query {s}: {e}")))?;
                    let fp = morgan_fingerprint(&g, txdiff::chem::DEFAULT_RADIUS, txdiff::chem::FINGERPRINT_BITS)?;
                    vec![(write_smiles(&g), fp.to_f64())]
                }
                (None, Some(t)) => projections(cfg, &t, &need(manifest, &cfg.paths.manifest, "manifest")?)?
                    .into_iter()
                    .map(|(p, q)| (p.id, q))
                    .collect(),
                (None, None) => return Err(CliError::Config("screen query needs --smiles or --tfe with --manifest".into())),
            };
            let mut text = String::from("query\trank\tid\tscore\tsmiles\n");
            for (label, q) in &queries {
                for (rank, hit) in db.query_topk(q, k)?.iter().enumerate() {
                    let smiles = db.find(&hit.id).map_or("", |r| r.smiles.as_str());
                    let _ = writeln!(text, "{label}\t{}\t{}\t{:.6}\t{smiles}", rank + 1, hit.id, hit.score);
                }
            }
            emit(out.as_deref(), &text)
        }
        ScreenCmd::Eval { db, tfe, manifest, ks, out } => {
            let db = load_db(db)?;
            let tfe = need(tfe, &cfg.paths.tfe, "tfe")?;
            let manifest = need(manifest, &cfg.paths.manifest, "manifest")?;
            let by_smiles: BTreeMap<&str, &str> = db.records().iter().map(|r| (r.smiles.as_str(), r.id.as_str())).collect();
            let mut queries = Vec::new();
            for (pair, q) in projections(cfg, &tfe, &manifest)? {
                let canon = parse_smiles(&pair.smiles).map(|g| write_smiles(&g)).unwrap_or_default();
                let id = by_smiles
                    .get(canon.as_str())
                    .ok_or_else(|| CliError::Data(format!("pair {}: target {} is not in the database", pair.id, pair.smiles)))?;
                queries.push((q, id.to_string()));
            }
            let ks = ks.unwrap_or_else(|| cfg.screen.ks.clone());
            let mut text = String::from("k\tmean_similarity\thit_rate\n");
            for row in screen_eval(&db, &queries, &ks)? {
                let _ = writeln!(text, "{}\t{:.6}\t{:.6}", row.k, row.mean_similarity, row.hit_rate);
            }
            emit(out.as_deref(), &text)
        }
    }
}

/// Fingerprint-space projections of each pair's perturbation embedding.
fn projections(cfg: &RunConfig, tfe: &Path, manifest: &Path) -> Result<Vec<(PerturbationPair, Vec<f64>)>> {
    let tfe = tfe_from_checkpoint(&load_checkpoint(tfe)?)?;
    let pairs = load_pairs(manifest)?;
    let (_, zs) = embed_pairs(cfg, &tfe, &pairs)?;
    let qs = zs.iter().map(|z| tfe.project_fingerprint(z)).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(pairs.into_iter().zip(qs).collect())
}

/// Graphs for every line; unparsable lines become empty (invalid) graphs
/// so they still count against validity.
fn graphs_with_invalid(path: &Path) -> Result<Vec<MolecularGraph>> {
    Ok(read_smiles_lines(&read(path)?)
        .iter()
        .map(|r| parse_smiles(&r.smiles).unwrap_or_else(|_| MolecularGraph::new(Vec::new(), Vec::new()).expect("empty graph")))
        .collect())
}

fn training_scaffolds(train: Option<&Path>) -> Result<HashSet<Scaffold>> {
    let Some(path) = train else {
        return Ok(HashSet::new());
    };
    Ok(load_graphs(path)?
        .iter()
        .filter_map(|g| bemis_murcko(&largest_component(g)).ok())
        .collect())
}

fn eval_metrics(a: EvalMetricsArgs) -> Result<()> {
    let generated = graphs_with_invalid(&a.generated)?;
    let reference = match &a.reference {
        Some(p) => graphs_with_invalid(p)?,
        None => Vec::new(),
    };
    let pairing = if a.paired { Pairing::Paired } else { Pairing::BestMatch };
    let report = metric_suite_with(&generated, &reference, &training_scaffolds(a.train.as_deref())?, pairing)?;
    emit(a.out.as_deref(), &report.to_text())
}

fn cfg_sweep(cfg: &RunConfig, a: CfgSweepArgs) -> Result<()> {
    let bundle = load_bundle(&need(a.model, &cfg.paths.model, "model")?)?;
    let manifest = need(a.manifest, &cfg.paths.manifest, "manifest")?;
    let (pairs, zs) = conditions(cfg, &bundle, &manifest, None)?;
    let targets = pairs
        .iter()
        .map(|p| parse_smiles(&p.smiles).map_err(|e| CliError::Data(format!("pair {}: {e}", p.id))))
        .collect::<Result<Vec<_>>>()?;
    let train = training_scaffolds(a.train.as_deref().or(cfg.paths.train.as_deref()))?;
    let scales = a.scales.unwrap_or_else(|| cfg.sweep.scales.clone());
    let mut text = format!("s\t{}\n", MetricReport::KEYS.join("\t"));
    for s in scales {
        // Same seed at every scale: only guidance differs between rows.
        let opts = sample_options(cfg, &a.sampling, s)?;
        let graphs = sample_bundle_with(&bundle, &zs, &opts)?;
        let refs: Vec<MolecularGraph> = (0..graphs.len()).map(|i| targets[i % targets.len()].clone()).collect();
        let r = metric_suite_with(&graphs, &refs, &train, Pairing::Paired)?;
        log::info!("s={s} morgan_sim {:.4} validity {:.4}", r.morgan_sim, r.validity);
        let vals: Vec<String> = r.values().iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(text, "{s}\t{}", vals.join("\t"));
    }
    emit(a.out.as_deref(), &text)
}

fn synth(cfg: &RunConfig, a: SynthArgs) -> Result<()> {
    let dir = &a.out;
    let pops = dir.join("populations");
    std::fs::create_dir_all(&pops).map_err(|e| CliError::io(&pops, e))?;
    let corpus = fixture_corpus(a.molecules, cfg.seed);
    let ids: Vec<String> = (0..corpus.len()).map(|i| format!("m{i:05}")).collect();
    write(&dir.join("corpus.smi"), write_smiles_lines(ids.iter().map(String::as_str).zip(corpus.iter().map(String::as_str))))?;
    write(&dir.join("index.csv"), fixture_index(a.molecules, cfg.seed).to_text())?;
    let task = two_cluster_task(a.pairs, a.dim, a.cells, cfg.seed);
    let mut manifest = String::from("pair_id,pre_file,post_file,target_smiles\n");
    for (i, smiles) in task.molecules.iter().enumerate() {
        let id = format!("p{i:04}");
        let pre = format!("populations/{id}_pre.csv");
        let post = format!("populations/{id}_post.csv");
        write(&dir.join(&pre), write_population(&task.pre[i]))?;
        write(&dir.join(&post), write_population(&task.post[i]))?;
        let _ = writeln!(manifest, "{id},{pre},{post},{smiles}");
    }
    write(&dir.join("manifest.csv"), manifest)?;
    let targets: Vec<(String, &str)> = task.molecules.iter().enumerate().map(|(i, s)| (format!("p{i:04}"), s.as_str())).collect();
    write(&dir.join("targets.smi"), write_smiles_lines(targets.iter().map(|(i, s)| (i.as_str(), *s))))?;
    log::info!("wrote {} molecules, {} pairs to {}", corpus.len(), task.molecules.len(), dir.display());
    Ok(())
}

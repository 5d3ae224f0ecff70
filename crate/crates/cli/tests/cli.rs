use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[diffusion]
steps = 10

[tfe]
rows = 16
d_model = 16
heads = 2
blocks = 1
d_z = 8
vae_hidden = 8
latent = 4
train_steps = 5
batch_size = 8

[denoiser]
d_model = 16
blocks = 1
heads = 2
d_edge = 4
ff_hidden = 16
train_steps = 10
batch_size = 8
"#;

fn txdiff(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_txdiff"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = txdiff(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn dataset() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", ".", "--molecules", "200", "--pairs", "6", "--dim", "8", "--cells", "20"]);
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn validate_reports_full_parse_rate() {
    let d = dataset();
    let report = ok(d.path(), &["validate", "--corpus", "corpus.smi"]);
    assert!(report.contains("records = 200"), "{report}");
    assert!(report.contains("parse_rate = 1.000000"), "{report}");
    assert!(report.contains("valence_rate = 1.000000"), "{report}");
}

#[test]
fn scaffold_split_passes_its_audit_and_is_deterministic() {
    let d = dataset();
    let p = d.path();
    ok(p, &["split", "scaffold", "--index", "index.csv", "--seed", "5", "--out", "a.csv"]);
    ok(p, &["split", "scaffold", "--index", "index.csv", "--seed", "5", "--out", "b.csv"]);
    let a = std::fs::read(p.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.csv")).unwrap());
    assert!(a.starts_with(b"id,partition\n"));
    let report = ok(p, &["split", "audit", "--index", "index.csv", "--split", "a.csv", "--protocol", "scaffold"]);
    assert!(report.contains("scaffold_overlap 0"), "{report}");
    assert!(report.trim_end().ends_with("PASS"), "{report}");

    // A random split leaks scaffolds, which the scaffold audit rejects.
    ok(p, &["split", "random", "--index", "index.csv", "--out", "r.csv"]);
    let out = txdiff(p, &["split", "audit", "--index", "index.csv", "--split", "r.csv", "--protocol", "scaffold"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn cell_split_holds_out_tissues() {
    let d = dataset();
    let p = d.path();
    let table = ok(p, &["split", "cell", "--index", "index.csv", "--held-out", "Lung"]);
    std::fs::write(p.join("c.csv"), &table).unwrap();
    let index = std::fs::read_to_string(p.join("index.csv")).unwrap();
    let lung: Vec<&str> = index.lines().filter(|l| l.contains(",Lung,")).map(|l| l.split(',').next().unwrap()).collect();
    assert!(!lung.is_empty());
    for id in lung {
        assert!(table.contains(&format!("{id},test\n")), "{id}");
    }
    ok(p, &["split", "audit", "--index", "index.csv", "--split", "c.csv", "--protocol", "cell"]);
}

#[test]
fn error_families_have_their_exit_codes() {
    let d = dataset();
    let p = d.path();
    std::fs::write(p.join("bad.toml"), "[denoiser]\nwidth = 3\n").unwrap();
    assert_eq!(txdiff(p, &["--config", "bad.toml", "config"]).status.code(), Some(2));
    assert_eq!(txdiff(p, &["validate", "--corpus", "missing.smi"]).status.code(), Some(3));
    std::fs::write(p.join("empty.smi"), "# nothing\n").unwrap();
    assert_eq!(txdiff(p, &["validate", "--corpus", "empty.smi"]).status.code(), Some(4));
    assert_eq!(txdiff(p, &["validate"]).status.code(), Some(2));

    let out = txdiff(p, &["validate", "--corpus", "missing.smi"]);
    let line = String::from_utf8(out.stderr).unwrap();
    let log: serde_json::Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    assert_eq!(log["level"], "ERROR");
}

#[test]
fn config_file_and_flags_take_precedence_in_order() {
    let d = dataset();
    let p = d.path();
    let shown = ok(p, &["config"]);
    assert!(shown.contains("steps = 500"), "{shown}");
    let shown = ok(p, &["--config", "small.toml", "config"]);
    assert!(shown.contains("seed = 3") && shown.contains("steps = 10"), "{shown}");
    let shown = ok(p, &["--config", "small.toml", "--seed", "8", "config"]);
    assert!(shown.contains("seed = 8"), "{shown}");
}

#[test]
fn screen_finds_the_query_itself() {
    let d = dataset();
    let p = d.path();
    let rep = ok(p, &["screen", "build", "--corpus", "corpus.smi", "--out", "db.fpdb"]);
    assert!(rep.contains("records = 200"), "{rep}");
    let first = std::fs::read_to_string(p.join("corpus.smi")).unwrap();
    let (smiles, id) = first.lines().next().unwrap().split_once(' ').unwrap();
    let hits = ok(p, &["screen", "query", "--db", "db.fpdb", "--smiles", smiles, "--top-k", "3"]);
    let top: Vec<&str> = hits.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(top[1], "1");
    assert_eq!(top[2], id);
    assert_eq!(top[3], "1.000000");
    assert_eq!(hits.lines().count(), 4);

    let fps = ok(p, &["fp", "build", "--corpus", "corpus.smi"]);
    assert_eq!(fps.lines().count(), 200);
}

#[test]
fn pipeline_runs_end_to_end_and_repeats_byte_for_byte() {
    let d = dataset();
    let p = d.path();
    let cfg = ["--config", "small.toml"];
    let run = |args: &[&str]| ok(p, &[&cfg[..], args].concat());
    run(&["train-tfe", "--manifest", "manifest.csv", "--out", "tfe.ck"]);
    run(&["train-diffusion", "--manifest", "manifest.csv", "--tfe", "tfe.ck", "--out", "model.ck"]);
    run(&["train-diffusion", "--manifest", "manifest.csv", "--tfe", "tfe.ck", "--out", "model2.ck"]);
    assert_eq!(std::fs::read(p.join("model.ck")).unwrap(), std::fs::read(p.join("model2.ck")).unwrap());

    let sample = ["sample", "--model", "model.ck", "--manifest", "manifest.csv", "--num-samples", "6", "--guidance-scale", "2", "--steps", "5"];
    let a = run(&sample);
    assert_eq!(a, run(&sample));
    assert_eq!(a.lines().count(), 6);
    assert!(a.lines().next().unwrap().ends_with(" p0000:0"), "{a}");

    let fixed = run(&["sample", "--model", "model.ck", "--num-samples", "3", "--num-atoms-from", "fixed:4", "--out", "gen.smi"]);
    assert!(fixed.is_empty());
    let report = run(&["eval-metrics", "--generated", "gen.smi", "--reference", "targets.smi", "--train", "corpus.smi"]);
    for key in ["validity = ", "uniqueness = ", "morgan_sim = ", "scaffold_novelty = "] {
        assert!(report.contains(key), "{report}");
    }

    let sweep = run(&["cfg-sweep", "--model", "model.ck", "--manifest", "manifest.csv", "--scales", "0,1", "--num-samples", "4", "--steps", "4"]);
    assert_eq!(sweep.lines().count(), 3);
    assert!(sweep.starts_with("s\tvalidity\t"), "{sweep}");

    run(&["screen", "build", "--corpus", "targets.smi", "--out", "t.fpdb"]);
    let eval = run(&["screen", "eval", "--db", "t.fpdb", "--tfe", "tfe.ck", "--manifest", "manifest.csv", "--ks", "1,5"]);
    assert_eq!(eval.lines().count(), 3);

    // A TFE checkpoint is not a model.
    let out = txdiff(p, &["sample", "--model", "tfe.ck"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unconditioned_training_from_a_corpus() {
    let d = dataset();
    let p = d.path();
    ok(p, &["--config", "small.toml", "train-diffusion", "--corpus", "corpus.smi", "--kernel", "marginal", "--out", "u.ck"]);
    let s = ok(p, &["sample", "--model", "u.ck", "--num-samples", "2"]);
    assert_eq!(s.lines().count(), 2);
    let out = txdiff(p, &["sample", "--model", "u.ck", "--manifest", "manifest.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

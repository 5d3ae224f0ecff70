//! Synthetic fixtures with the same file formats as real data: a
//! drug-like SMILES corpus, a dataset index with a tissue / cell-line
//! hierarchy, and a two-cluster conditioning task with paired cell
//! populations.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::molgraph::{is_valid, parse_smiles, write_smiles};
use crate::seed::rng_for;
use crate::splits::{DatasetIndex, IndexRecord};
use crate::tfe::{CellPopulation, Phase};

/// Ring atoms as SMILES tokens. Substituents only go on plain carbons.
const RINGS: &[&[&str]] = &[
    &["c", "c", "c", "c", "c", "c"],
    &["c", "c", "n", "c", "c", "c"],
    &["c", "n", "c", "n", "c", "c"],
    &["C", "C", "C", "C", "C", "C"],
    &["C", "C", "N", "C", "C", "C"],
    &["C", "C", "O", "C", "C", "C"],
    &["C", "O", "C", "C", "N", "C"],
    &["C", "C", "C", "C", "C"],
    &["c", "c", "s", "c", "c"],
    &["c", "c", "o", "c", "c"],
    &["c", "c", "[nH]", "c", "c"],
    &["C", "C", "N", "C", "C"],
];
const SUBSTITUENTS: &[&str] = &[
    "C", "O", "N", "F", "Cl", "Br", "I", "CC", "OC", "C#N", "C(=O)O", "C(N)=O", "NC(C)=O", "C(F)(F)F", "S(C)(=O)=O", "CO",
];
const LINKERS: &[&str] = &["", "C", "CC", "O", "N", "C(=O)N", "NC(=O)", "S", "OCC", "C=C"];
const CHAIN: &[&str] = &["C", "C", "C", "N", "O", "S"];

fn substitutable(tok: &str) -> bool {
    tok == "c" || tok == "C"
}

/// Ring SMILES with ring-closure digit `d`. Position `free` (if any) is
/// kept unsubstituted because something else bonds there.
fn decorated_ring<R: Rng + ?Sized>(rng: &mut R, atoms: &[&str], d: u32, free: &[usize], subs: &[&str], p: f64) -> String {
    let mut s = String::new();
    for (i, tok) in atoms.iter().enumerate() {
        s.push_str(tok);
        if i == 0 {
            s.push_str(&d.to_string());
        }
        if substitutable(tok) && !free.contains(&i) && rng.gen_bool(p) {
            s.push('(');
            s.push_str(subs.choose(rng).expect("non-empty"));
            s.push(')');
        }
    }
    s.push_str(&d.to_string());
    s
}

fn random_chain<R: Rng + ?Sized>(rng: &mut R, len: usize, branches: &[&str], p: f64) -> String {
    let mut s = String::from("C");
    for _ in 1..len {
        if rng.gen_bool(p) {
            s.push('(');
            s.push_str(branches.choose(rng).expect("non-empty"));
            s.push(')');
        }
        s.push_str(CHAIN.choose(rng).expect("non-empty"));
    }
    s
}

fn candidate<R: Rng + ?Sized>(rng: &mut R) -> String {
    match rng.gen_range(0..10) {
        0 => {
            let n = rng.gen_range(2..9);
            random_chain(rng, n, SUBSTITUENTS, 0.3)
        }
        1..=4 => {
            let ring = RINGS.choose(rng).expect("non-empty");
            let head = if rng.gen_bool(0.5) {
                SUBSTITUENTS.choose(rng).expect("non-empty").to_string()
            } else {
                String::new()
            };
            // the head substituent bonds to ring atom 0
            format!("{head}{}", decorated_ring(rng, ring, 1, &[0], SUBSTITUENTS, 0.25))
        }
        _ => {
            let (r1, r2) = (RINGS.choose(rng).expect("non-empty"), RINGS.choose(rng).expect("non-empty"));
            let linker = LINKERS.choose(rng).expect("non-empty");
            // the linker leaves ring 1 from its last atom and enters ring 2 at atom 0
            let a = decorated_ring(rng, r1, 1, &[r1.len() - 1], SUBSTITUENTS, 0.2);
            let b = decorated_ring(rng, r2, 2, &[0], SUBSTITUENTS, 0.2);
            format!("{a}{linker}{b}")
        }
    }
}

/// Keeps candidates that parse, are valid and are new, in canonical form.
fn collect_distinct<R: Rng + ?Sized>(rng: &mut R, n: usize, mut gen: impl FnMut(&mut R) -> String) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < 200 * n + 1000 {
        attempts += 1;
        let Ok(g) = parse_smiles(&gen(rng)) else { continue };
        if !is_valid(&g) || g.components().len() != 1 {
            continue;
        }
        let canon = write_smiles(&g);
        if seen.insert(canon.clone()) {
            out.push(canon);
        }
    }
    out
}

/// `n` distinct canonical SMILES of small drug-like molecules.
pub fn fixture_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = rng_for(seed, "synth.corpus");
    collect_distinct(&mut rng, n, candidate)
}

const TISSUES: &[(&str, &str, usize)] = &[
    ("Lung", "NSCLC", 6),
    ("Breast", "BRCA", 5),
    ("Colon", "COAD", 4),
    ("Skin", "SKCM", 4),
    ("Blood", "AML", 5),
    ("Kidney", "KIRC", 3),
    ("Liver", "LIHC", 3),
    ("Prostate", "PRAD", 2),
];

/// Tissue names used by [`fixture_index`].
pub fn fixture_tissues() -> Vec<&'static str> {
    TISSUES.iter().map(|t| t.0).collect()
}

/// A dataset index of `n` records drawn from a corpus of `n / 4`
/// molecules, so molecules and scaffolds recur across cell lines.
pub fn fixture_index(n: usize, seed: u64) -> DatasetIndex {
    let corpus = fixture_corpus((n / 4).max(20), seed);
    let mut rng = rng_for(seed, "synth.index");
    let lines: Vec<(String, &str, &str)> = TISSUES
        .iter()
        .flat_map(|&(tissue, tumor, k)| (0..k).map(move |i| (format!("{}{}", tissue[..2].to_uppercase(), i + 1), tissue, tumor)))
        .collect();
    let records = (0..n)
        .map(|i| {
            let (cell, tissue, tumor) = lines.choose(&mut rng).expect("non-empty");
            IndexRecord {
                id: format!("rec{i:05}"),
                smiles: corpus.choose(&mut rng).expect("non-empty").clone(),
                cell_line: cell.clone(),
                tissue: tissue.to_string(),
                tumor_type: tumor.to_string(),
            }
        })
        .collect();
    DatasetIndex::new(records).expect("ids are unique")
}

/// Two structurally distinct molecule families, each paired with cell
/// populations whose perturbation response is family specific.
#[derive(Clone, Debug)]
pub struct ClusterTask {
    pub molecules: Vec<String>,
    /// Family (0 or 1) of each molecule.
    pub cluster: Vec<usize>,
    pub pre: Vec<CellPopulation>,
    pub post: Vec<CellPopulation>,
}

const AROMATIC_SUBS: &[&str] = &["N", "C(N)=O", "NC(C)=O", "C#N", "NC", "C(=O)O", "O", "NC=O"];
const ALIPHATIC_BRANCHES: &[&str] = &["O", "F", "Cl", "C", "OC"];

fn family_a<R: Rng + ?Sized>(rng: &mut R) -> String {
    let ring = RINGS[..3].choose(rng).expect("non-empty");
    decorated_ring(rng, ring, 1, &[], AROMATIC_SUBS, 0.35)
}

fn family_b<R: Rng + ?Sized>(rng: &mut R) -> String {
    let n = rng.gen_range(3..8);
    random_chain(rng, n, ALIPHATIC_BRANCHES, 0.4)
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn population<R: Rng + ?Sized>(rng: &mut R, base: &[f64], shift: Option<&[f64]>, cells: usize) -> CellPopulation {
    let d = base.len();
    let mut data = Vec::with_capacity(cells * d);
    let mut phases = Vec::with_capacity(cells);
    let mut clusters = Vec::with_capacity(cells);
    for c in 0..cells {
        let sub = (c % 3) as u32;
        for (k, &b) in base.iter().enumerate() {
            let s = shift.map_or(0.0, |s| s[k]);
            // a small per-subcluster offset gives the populations structure
            data.push(b + s + 0.1 * f64::from(sub) * ((k % 5) as f64 - 2.0) / 2.0 + 0.3 * gauss(rng));
        }
        phases.push(Phase::ALL[rng.gen_range(0..3)]);
        clusters.push(sub);
    }
    CellPopulation::new(Tensor::new(vec![cells, d], data).expect("shape"), phases, clusters).expect("valid population")
}

/// `per_cluster` molecules of each family with `cells`-cell pre and post
/// populations of width `dim`. The post population carries the family's
/// response direction plus noise.
pub fn two_cluster_task(per_cluster: usize, dim: usize, cells: usize, seed: u64) -> ClusterTask {
    let mut rng = rng_for(seed, "synth.task");
    let a = collect_distinct(&mut rng, per_cluster, family_a);
    let b = collect_distinct(&mut rng, per_cluster, family_b);
    let response: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..dim).map(|_| 1.5 * gauss(&mut rng)).collect::<Vec<f64>>())
        .collect();
    let mut task = ClusterTask {
        molecules: Vec::new(),
        cluster: Vec::new(),
        pre: Vec::new(),
        post: Vec::new(),
    };
    for (fam, mols) in [a, b].into_iter().enumerate() {
        for m in mols {
            let base: Vec<f64> = (0..dim).map(|_| 0.5 * gauss(&mut rng)).collect();
            task.pre.push(population(&mut rng, &base, None, cells));
            task.post.push(population(&mut rng, &base, Some(&response[fam]), cells));
            task.molecules.push(m);
            task.cluster.push(fam);
        }
    }
    task
}

/// Deterministic generator for callers that need their own stream.
pub fn rng(seed: u64, name: &str) -> ChaCha8Rng {
    rng_for(seed, name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::{morgan_fingerprint, tanimoto_counts, DEFAULT_RADIUS, FINGERPRINT_BITS};

    #[test]
    fn corpus_is_large_distinct_and_valid() {
        let c = fixture_corpus(1200, 5);
        assert_eq!(c.len(), 1200);
        assert_eq!(c.iter().collect::<BTreeSet<_>>().len(), 1200);
        assert!(c.iter().all(|s| is_valid(&parse_smiles(s).unwrap())));
        assert_eq!(c, fixture_corpus(1200, 5));
    }

    #[test]
    fn index_has_hierarchy() {
        let d = fixture_index(400, 1);
        assert_eq!(d.len(), 400);
        let tissues: BTreeSet<_> = d.records().iter().map(|r| r.tissue.as_str()).collect();
        assert_eq!(tissues.len(), TISSUES.len());
    }

    #[test]
    fn families_are_dissimilar() {
        let t = two_cluster_task(30, 8, 12, 2);
        assert_eq!(t.molecules.len(), 60);
        let fps: Vec<_> = t.molecules.iter().map(|s| morgan_fingerprint(&parse_smiles(s).unwrap(), DEFAULT_RADIUS, FINGERPRINT_BITS).unwrap()).collect();
        let mean = |x: usize, y: usize| {
            let mut s = 0.0;
            for i in 0..30 {
                for j in 0..30 {
                    s += tanimoto_counts(&fps[30 * x + i], &fps[30 * y + j]).unwrap();
                }
            }
            s / 900.0
        };
        assert!(mean(0, 0) > mean(0, 1) + 0.1);
        assert!(mean(1, 1) > mean(0, 1) + 0.1);
        assert_eq!(t.pre[0].dim(), 8);
    }
}

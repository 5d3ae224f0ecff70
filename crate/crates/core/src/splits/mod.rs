//! Dataset partitioning with leakage audits.
//!
//! Three protocols: an IID random cut, a Bemis-Murcko scaffold split that
//! assigns whole scaffold clusters, and a cell split that holds out whole
//! tissues and carves validation by cell line. Everything is deterministic
//! per dataset and seed.

mod audit;
mod index;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chem::{bemis_murcko, Scaffold};
use crate::molgraph::parse_smiles;

pub use audit::{leakage_audit, AuditReport, Protocol};
pub use index::{DatasetIndex, IndexRecord};

pub const DEFAULT_TRIVIAL_MAX_ATOMS: usize = 6;
/// Target ratio train:val:test in percent.
pub const RATIO: [usize; 3] = [85, 10, 5];
const CELL_RATIO: [usize; 2] = [89, 11];
const MIN_RECORDS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("dataset has {0} records, at least 20 are needed")]
    TooSmall(usize),
    #[error("record {id}: SMILES does not parse to a valid molecule")]
    ParseFailure { id: String },
    #[error("unknown tissue {0:?}")]
    UnknownTissue(String),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("unknown record id {0:?}")]
    UnknownId(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Val,
    Test,
    /// Dropped by trivial-scaffold downsampling; belongs to no partition.
    Excluded,
}

impl Partition {
    pub const SPLITS: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
            Partition::Excluded => "excluded",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            "excluded" => Ok(Partition::Excluded),
            other => Err(format!("unknown partition {other:?}")),
        }
    }
}

/// One partition label per record, in index order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    entries: Vec<(String, Partition)>,
}

impl SplitAssignment {
    pub fn new(entries: Vec<(String, Partition)>) -> Result<Self, SplitError> {
        let mut seen = BTreeSet::new();
        for (id, _) in &entries {
            if !seen.insert(id.as_str()) {
                return Err(SplitError::DuplicateId(id.clone()));
            }
        }
        Ok(SplitAssignment { entries })
    }

    pub fn entries(&self) -> &[(String, Partition)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<Partition> {
        self.entries.iter().find(|(i, _)| i == id).map(|&(_, p)| p)
    }

    /// Record counts for train, val and test.
    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for (_, p) in &self.entries {
            if let Some(k) = Partition::SPLITS.iter().position(|q| q == p) {
                c[k] += 1;
            }
        }
        c
    }

    pub fn set(&mut self, id: &str, part: Partition) -> Result<(), SplitError> {
        let e = self
            .entries
            .iter_mut()
            .find(|(i, _)| i == id)
            .ok_or_else(|| SplitError::UnknownId(id.to_string()))?;
        e.1 = part;
        Ok(())
    }

    /// `id,partition` table.
    pub fn to_text(&self) -> String {
        let mut out = String::from("id,partition\n");
        for (id, p) in &self.entries {
            out.push_str(id);
            out.push(',');
            out.push_str(p.as_str());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, SplitError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "id,partition" => {}
            Some((i, _)) => {
                return Err(SplitError::Parse {
                    line: i + 1,
                    msg: "expected header id,partition".into(),
                })
            }
            None => {
                return Err(SplitError::Parse {
                    line: 0,
                    msg: "empty split file".into(),
                })
            }
        }
        let entries = lines
            .map(|(i, l)| {
                let (id, p) = l.trim().split_once(',').ok_or(SplitError::Parse {
                    line: i + 1,
                    msg: "expected two fields".into(),
                })?;
                let p = p.parse().map_err(|msg| SplitError::Parse { line: i + 1, msg })?;
                Ok((id.to_string(), p))
            })
            .collect::<Result<Vec<_>, SplitError>>()?;
        SplitAssignment::new(entries)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SplitWarning {
    /// Some partition received no records, typically because every
    /// molecule shares a scaffold.
    Unsplittable { empty: Vec<Partition> },
}

impl fmt::Display for SplitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitWarning::Unsplittable { empty } => {
                let names: Vec<_> = empty.iter().map(|p| p.as_str()).collect();
                write!(f, "unsplittable: empty partitions {}", names.join(","))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScaffoldSplit {
    pub assignment: SplitAssignment,
    pub warnings: Vec<SplitWarning>,
}

fn ratio_counts(n: usize) -> [usize; 3] {
    let train = (RATIO[0] * n + 50) / 100;
    let val = (RATIO[1] * n + 50) / 100;
    [train, val, n - train - val]
}

pub fn random_split(ds: &DatasetIndex, seed: u64) -> Result<SplitAssignment, SplitError> {
    let n = ds.len();
    if n < MIN_RECORDS {
        return Err(SplitError::TooSmall(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let [train, val, _] = ratio_counts(n);
    let mut parts = vec![Partition::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        parts[i] = if rank < train {
            Partition::Train
        } else if rank < train + val {
            Partition::Val
        } else {
            Partition::Test
        };
    }
    Ok(label(ds, parts))
}

fn label(ds: &DatasetIndex, parts: Vec<Partition>) -> SplitAssignment {
    SplitAssignment {
        entries: ds.records().iter().map(|r| r.id.clone()).zip(parts).collect(),
    }
}

/// Partition whose fill relative to its target is lowest; ties go to the
/// earlier partition.
fn emptiest(fill: &[usize], target: &[usize]) -> usize {
    (0..fill.len())
        .min_by(|&a, &b| {
            // fill[a]/target[a] vs fill[b]/target[b] without division
            (fill[a] * target[b]).cmp(&(fill[b] * target[a])).then(a.cmp(&b))
        })
        .expect("non-empty")
}

/// Assigns groups greedily largest-first. `groups` must already be in the
/// desired order.
fn greedy_assign(groups: &[Vec<usize>], target: &[usize], fill: &mut [usize]) -> Vec<usize> {
    groups
        .iter()
        .map(|g| {
            let k = emptiest(fill, target);
            fill[k] += g.len();
            k
        })
        .collect()
}

pub fn record_scaffold(smiles: &str) -> Option<Scaffold> {
    parse_smiles(smiles).ok().and_then(|g| bemis_murcko(&g).ok())
}

fn median(mut v: Vec<usize>) -> usize {
    v.sort_unstable();
    match v.len() {
        0 => 0,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2,
    }
}

/// Clusters records by scaffold and assigns whole clusters. Trivial
/// scaffolds (EMPTY or at most `trivial_max_atoms` heavy atoms) go to train,
/// each capped at the median non-trivial cluster size; the surplus is
/// marked [`Partition::Excluded`].
pub fn scaffold_split(ds: &DatasetIndex, seed: u64, trivial_max_atoms: usize) -> Result<ScaffoldSplit, SplitError> {
    let mut clusters: BTreeMap<Scaffold, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records().iter().enumerate() {
        let s = record_scaffold(&r.smiles).ok_or_else(|| SplitError::ParseFailure { id: r.id.clone() })?;
        clusters.entry(s).or_default().push(i);
    }
    let (trivial, mut real): (Vec<_>, Vec<_>) = clusters
        .into_iter()
        .partition(|(s, _)| s.is_empty() || s.heavy_atoms() <= trivial_max_atoms);

    let cap = if real.is_empty() {
        median(trivial.iter().map(|(_, m)| m.len()).collect())
    } else {
        median(real.iter().map(|(_, m)| m.len()).collect())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts = vec![Partition::Excluded; ds.len()];
    let mut kept = 0;
    for (_, mut members) in trivial {
        members.shuffle(&mut rng);
        for &i in members.iter().take(cap.max(1)) {
            parts[i] = Partition::Train;
            kept += 1;
        }
    }

    // Largest first; equal sizes ordered by a seeded shuffle so the seed
    // matters beyond downsampling.
    real.shuffle(&mut rng);
    real.sort_by_key(|(_, m)| std::cmp::Reverse(m.len()));
    let total = kept + real.iter().map(|(_, m)| m.len()).sum::<usize>();
    let target = ratio_counts(total);
    let mut fill = [kept, 0, 0];
    let groups: Vec<Vec<usize>> = real.into_iter().map(|(_, m)| m).collect();
    for (g, k) in groups.iter().zip(greedy_assign(&groups, &target, &mut fill)) {
        for &i in g {
            parts[i] = Partition::SPLITS[k];
        }
    }

    let empty: Vec<Partition> = Partition::SPLITS
        .iter()
        .zip(fill)
        .filter(|&(_, f)| f == 0)
        .map(|(&p, _)| p)
        .collect();
    let mut warnings = Vec::new();
    if !empty.is_empty() {
        let w = SplitWarning::Unsplittable { empty };
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(ScaffoldSplit {
        assignment: label(ds, parts),
        warnings,
    })
}

/// Held-out tissues go to test. The remaining cell lines are assigned
/// whole, largest first, to train or val at 89:11 by record count.
pub fn cell_split(ds: &DatasetIndex, held_out: &BTreeSet<String>) -> Result<SplitAssignment, SplitError> {
    let tissues: BTreeSet<&str> = ds.records().iter().map(|r| r.tissue.as_str()).collect();
    if let Some(t) = held_out.iter().find(|t| !tissues.contains(t.as_str())) {
        return Err(SplitError::UnknownTissue(t.clone()));
    }
    let mut parts = vec![Partition::Test; ds.len()];
    let mut lines: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records().iter().enumerate() {
        if !held_out.contains(&r.tissue) {
            lines.entry(r.cell_line.as_str()).or_default().push(i);
        }
    }
    let mut groups: Vec<Vec<usize>> = lines.into_values().collect();
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    let total: usize = groups.iter().map(Vec::len).sum();
    let train = (CELL_RATIO[0] * total + 50) / 100;
    let target = [train, total - train];
    let mut fill = [0, 0];
    for (g, k) in groups.iter().zip(greedy_assign(&groups, &target, &mut fill)) {
        for &i in g {
            parts[i] = Partition::SPLITS[k];
        }
    }
    Ok(label(ds, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: &[(&str, &str, &str)]) -> DatasetIndex {
        let recs = rows
            .iter()
            .enumerate()
            .map(|(i, &(smiles, cell, tissue))| IndexRecord {
                id: format!("r{i}"),
                smiles: smiles.into(),
                cell_line: cell.into(),
                tissue: tissue.into(),
                tumor_type: "t".into(),
            })
            .collect();
        DatasetIndex::new(recs).unwrap()
    }

    fn simple(n: usize) -> DatasetIndex {
        let rows: Vec<_> = (0..n).map(|_| ("CCO", "A", "Lung")).collect();
        ds(&rows)
    }

    #[test]
    fn random_counts_are_exact() {
        assert_eq!(random_split(&simple(100), 1).unwrap().counts(), [85, 10, 5]);
        assert_eq!(random_split(&simple(1000), 1).unwrap().counts(), [850, 100, 50]);
        assert_eq!(random_split(&simple(19), 1), Err(SplitError::TooSmall(19)));
        assert_eq!(random_split(&simple(50), 7).unwrap(), random_split(&simple(50), 7).unwrap());
        assert_ne!(random_split(&simple(50), 7).unwrap(), random_split(&simple(50), 8).unwrap());
    }

    #[test]
    fn two_clusters_go_large_to_train() {
        let mut rows = vec![("c1ccc2ccccc2c1C", "A", "Lung"); 85];
        rows.extend(vec![("C1CCC2CCCCC2C1O", "A", "Lung"); 15]);
        let s = scaffold_split(&ds(&rows), 0, DEFAULT_TRIVIAL_MAX_ATOMS).unwrap();
        assert_eq!(s.assignment.counts(), [85, 15, 0]);
        assert_eq!(s.assignment.get("r0"), Some(Partition::Train));
        assert_eq!(s.assignment.get("r99"), Some(Partition::Val));
        assert_eq!(s.warnings, vec![SplitWarning::Unsplittable { empty: vec![Partition::Test] }]);
    }

    #[test]
    fn one_scaffold_is_unsplittable() {
        let rows = vec![("c1ccc2ccccc2c1CC", "A", "Lung"); 30];
        let s = scaffold_split(&ds(&rows), 0, DEFAULT_TRIVIAL_MAX_ATOMS).unwrap();
        assert_eq!(s.assignment.counts(), [30, 0, 0]);
        assert_eq!(
            s.warnings,
            vec![SplitWarning::Unsplittable {
                empty: vec![Partition::Val, Partition::Test]
            }]
        );
    }

    #[test]
    fn trivial_scaffolds_are_capped_in_train() {
        let mut rows = vec![("c1ccccc1C", "A", "Lung"); 40];
        rows.extend(vec![("CCCO", "A", "Lung"); 10]);
        for s in ["c1ccc2ccccc2c1", "C1CCC2CCCCC2C1", "c1ccc(-c2ccccc2)cc1"] {
            rows.extend(vec![(s, "A", "Lung"); 4]);
        }
        let d = ds(&rows);
        let s = scaffold_split(&d, 3, DEFAULT_TRIVIAL_MAX_ATOMS).unwrap().assignment;
        let train_benzene = (0..40).filter(|i| s.get(&format!("r{i}")) == Some(Partition::Train)).count();
        assert_eq!(train_benzene, 4);
        assert!((0..50).all(|i| matches!(s.get(&format!("r{i}")), Some(Partition::Train | Partition::Excluded))));
        let excluded = s.entries().iter().filter(|(_, p)| *p == Partition::Excluded).count();
        assert_eq!(excluded, 36 + 6);
    }

    #[test]
    fn unparsable_names_the_record() {
        let d = ds(&[("CCO", "A", "x"), ("C1CC", "A", "x")]);
        assert_eq!(
            scaffold_split(&d, 0, 6).unwrap_err(),
            SplitError::ParseFailure { id: "r1".into() }
        );
    }

    #[test]
    fn cell_split_holds_out_tissue() {
        let mut rows = Vec::new();
        for (cell, tissue, n) in [("A549", "Lung", 10), ("H1", "Lung", 5), ("MCF7", "Breast", 30), ("T47D", "Breast", 4)] {
            rows.extend(vec![("CCO", cell, tissue); n]);
        }
        let d = ds(&rows);
        let held: BTreeSet<String> = ["Lung".to_string()].into();
        let s = cell_split(&d, &held).unwrap();
        for (r, (_, p)) in d.records().iter().zip(s.entries()) {
            assert_eq!(r.tissue == "Lung", *p == Partition::Test);
        }
        assert_eq!(s.counts(), [30, 4, 15]);
        let bad: BTreeSet<String> = ["Kidney".to_string()].into();
        assert_eq!(cell_split(&d, &bad), Err(SplitError::UnknownTissue("Kidney".into())));
    }

    #[test]
    fn split_file_roundtrip() {
        let s = random_split(&simple(25), 2).unwrap();
        assert_eq!(SplitAssignment::parse(&s.to_text()).unwrap(), s);
        assert!(SplitAssignment::parse("id,partition\na,train\na,val\n").is_err());
        assert!(SplitAssignment::parse("id,partition\na,holdout\n").is_err());
    }
}

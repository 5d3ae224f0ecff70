use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::molgraph::{parse_smiles, write_smiles};

use super::{record_scaffold, DatasetIndex, Partition, SplitAssignment, SplitError};

/// Which split produced an assignment; decides the guarded axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Random,
    Scaffold,
    Cell,
}

impl FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(Protocol::Random),
            "scaffold" => Ok(Protocol::Scaffold),
            "cell" => Ok(Protocol::Cell),
            o => Err(format!("unknown protocol {o:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditReport {
    pub protocol: Protocol,
    /// Distinct scaffolds present in more than one partition.
    pub scaffold_overlap: usize,
    /// Distinct cell lines present in more than one partition.
    pub cell_line_overlap: usize,
    /// Distinct canonical SMILES present in more than one partition.
    pub duplicate_smiles: usize,
    /// Records on a leaking value of a guarded axis.
    pub offending: Vec<String>,
    pub pass: bool,
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scaffold_overlap {}", self.scaffold_overlap)?;
        writeln!(f, "cell_line_overlap {}", self.cell_line_overlap)?;
        writeln!(f, "duplicate_smiles {}", self.duplicate_smiles)?;
        if !self.offending.is_empty() {
            writeln!(f, "offending {}", self.offending.join(","))?;
        }
        write!(f, "{}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// Values seen in more than one partition, and the ids carrying them.
fn overlap<'a>(keyed: impl Iterator<Item = (String, Partition, &'a str)>) -> (usize, Vec<&'a str>) {
    let mut parts: BTreeMap<String, (BTreeSet<Partition>, Vec<&str>)> = BTreeMap::new();
    for (key, p, id) in keyed {
        let e = parts.entry(key).or_default();
        e.0.insert(p);
        e.1.push(id);
    }
    let leaking: Vec<_> = parts.into_values().filter(|(p, _)| p.len() > 1).collect();
    let ids = leaking.iter().flat_map(|(_, ids)| ids.iter().copied()).collect();
    (leaking.len(), ids)
}

/// Counts cross-partition overlap along three axes. Records marked
/// excluded take no part. Random splits guard nothing, scaffold splits guard
/// scaffolds and duplicate molecules, cell splits guard cell lines.
pub fn leakage_audit(ds: &DatasetIndex, split: &SplitAssignment, protocol: Protocol) -> Result<AuditReport, SplitError> {
    let mut rows = Vec::with_capacity(ds.len());
    for r in ds.records() {
        let p = split.get(&r.id).ok_or_else(|| SplitError::UnknownId(r.id.clone()))?;
        if p != Partition::Excluded {
            rows.push((r, p));
        }
    }
    let (scaffold_overlap, s_ids) = overlap(rows.iter().filter_map(|&(r, p)| {
        // unparsable molecules have no scaffold to leak
        record_scaffold(&r.smiles).map(|s| (s.to_string(), p, r.id.as_str()))
    }));
    let (cell_line_overlap, c_ids) = overlap(rows.iter().map(|&(r, p)| (r.cell_line.clone(), p, r.id.as_str())));
    let (duplicate_smiles, d_ids) = overlap(rows.iter().map(|&(r, p)| {
        let key = parse_smiles(&r.smiles).map_or_else(|_| r.smiles.clone(), |g| write_smiles(&g));
        (key, p, r.id.as_str())
    }));
    let guarded: Vec<(usize, Vec<&str>)> = match protocol {
        Protocol::Random => vec![],
        Protocol::Scaffold => vec![(scaffold_overlap, s_ids), (duplicate_smiles, d_ids)],
        Protocol::Cell => vec![(cell_line_overlap, c_ids)],
    };
    let pass = guarded.iter().all(|(n, _)| *n == 0);
    let offending: BTreeSet<&str> = guarded.into_iter().flat_map(|(_, ids)| ids).collect();
    Ok(AuditReport {
        protocol,
        scaffold_overlap,
        cell_line_overlap,
        duplicate_smiles,
        offending: offending.into_iter().map(str::to_string).collect(),
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{random_split, scaffold_split, IndexRecord};
    use super::*;

    fn dataset() -> DatasetIndex {
        let scaffolds = ["c1ccc2ccccc2c1", "C1CCC2CCCCC2C1", "c1ccc(-c2ccccc2)cc1", "c1ccc(Cc2ccccc2)cc1", "c1ccc2[nH]ccc2c1"];
        let subs = ["C", "O", "N", "CC", "CO", "CN"];
        let mut recs = Vec::new();
        for (i, s) in scaffolds.iter().enumerate() {
            for (j, x) in subs.iter().take(2 + 2 * i).enumerate() {
                let n = recs.len();
                recs.push(IndexRecord {
                    id: format!("m{n}"),
                    smiles: format!("{x}{s}"),
                    cell_line: format!("cl{}", (i + j) % 4),
                    tissue: "T".into(),
                    tumor_type: "u".into(),
                });
            }
        }
        DatasetIndex::new(recs).unwrap()
    }

    #[test]
    fn clean_scaffold_split_passes() {
        let d = dataset();
        let s = scaffold_split(&d, 1, 6).unwrap().assignment;
        let rep = leakage_audit(&d, &s, Protocol::Scaffold).unwrap();
        assert_eq!(rep.scaffold_overlap, 0);
        assert!(rep.pass, "{rep}");
    }

    #[test]
    fn corrupted_assignment_fails_with_ids() {
        let d = dataset();
        let mut s = scaffold_split(&d, 1, 6).unwrap().assignment;
        let p0 = s.get("m0").unwrap();
        let other = if p0 == Partition::Train { Partition::Test } else { Partition::Train };
        s.set("m0", other).unwrap();
        let rep = leakage_audit(&d, &s, Protocol::Scaffold).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.scaffold_overlap, 1);
        assert_eq!(rep.offending, vec!["m0".to_string(), "m1".to_string()]);
    }

    #[test]
    fn random_split_reports_but_passes() {
        let d = dataset();
        let s = random_split(&d, 4).unwrap();
        let rep = leakage_audit(&d, &s, Protocol::Random).unwrap();
        assert!(rep.scaffold_overlap > 0);
        assert!(rep.pass);
        assert!(rep.offending.is_empty());
    }
}

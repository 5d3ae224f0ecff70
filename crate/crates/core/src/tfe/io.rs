//! Text formats for cell populations and profile-pair manifests.
//!
//! A population file has the header `id,phase,cluster,e0,...,e{d-1}` and one
//! cell per line. A file holding a single cell is read as a bulk profile.
//! A manifest has the header `pair_id,pre_file,post_file,target_smiles`;
//! relative paths resolve against the manifest's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;

use super::aggregate::{CellPopulation, Phase};
use super::TfeError;

fn parse_err(line: usize, msg: impl Into<String>) -> TfeError {
    TfeError::Parse {
        line,
        msg: msg.into(),
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_population(text: &str) -> Result<CellPopulation, TfeError> {
    let mut lines = data_lines(text);
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[..3] != ["id", "phase", "cluster"] {
        return Err(parse_err(hl, "header must start with id,phase,cluster"));
    }
    for (k, c) in cols[3..].iter().enumerate() {
        if *c != format!("e{k}") {
            return Err(parse_err(hl, format!("expected column e{k}, found {c}")));
        }
    }
    let d = cols.len() - 3;
    let (mut data, mut phases, mut clusters) = (Vec::new(), Vec::new(), Vec::new());
    for (ln, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != d + 3 {
            return Err(parse_err(ln, format!("expected {} fields, found {}", d + 3, f.len())));
        }
        phases.push(Phase::parse(f[1]).ok_or_else(|| parse_err(ln, format!("unknown phase {}", f[1])))?);
        clusters.push(f[2].parse().map_err(|_| parse_err(ln, format!("bad cluster {}", f[2])))?);
        for v in &f[3..] {
            let x: f64 = v.parse().map_err(|_| parse_err(ln, format!("bad value {v}")))?;
            if !x.is_finite() {
                return Err(parse_err(ln, "non-finite value"));
            }
            data.push(x);
        }
    }
    let n = phases.len();
    CellPopulation::new(Tensor::new(vec![n, d], data)?, phases, clusters)
}

pub fn write_population(pop: &CellPopulation) -> String {
    let d = pop.dim();
    let mut out = String::from("id,phase,cluster");
    for k in 0..d {
        let _ = write!(out, ",e{k}");
    }
    out.push('\n');
    for c in 0..pop.len() {
        let _ = write!(out, "c{c},{},{}", pop.phases()[c].as_str(), pop.clusters()[c]);
        for v in pop.embeddings().row(c) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub pair_id: String,
    pub pre_file: PathBuf,
    pub post_file: PathBuf,
    pub target_smiles: String,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<PairEntry>, TfeError> {
    let mut lines = data_lines(text);
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["pair_id", "pre_file", "post_file", "target_smiles"] {
        return Err(parse_err(hl, "header must be pair_id,pre_file,post_file,target_smiles"));
    }
    let mut out = Vec::new();
    for (ln, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(parse_err(ln, format!("expected 4 fields, found {}", f.len())));
        }
        out.push(PairEntry {
            pair_id: f[0].to_string(),
            pre_file: base.join(f[1]),
            post_file: base.join(f[2]),
            target_smiles: f[3].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_roundtrip() {
        let text = "id,phase,cluster,e0,e1\nc0,G1,0,1.5,2\n# note\nc1,G2/M,3,-1,0.25\n";
        let pop = parse_population(text).unwrap();
        assert_eq!(pop.len(), 2);
        assert_eq!(pop.phases(), &[Phase::G1, Phase::G2M]);
        let back = parse_population(&write_population(&pop)).unwrap();
        assert_eq!(back, pop);
    }

    #[test]
    fn population_errors_carry_lines() {
        let e = parse_population("id,phase,cluster,e0\nc0,G3,0,1\n").unwrap_err();
        assert!(matches!(e, TfeError::Parse { line: 2, .. }));
        assert!(parse_population("id,phase,e0\n").is_err());
    }

    #[test]
    fn manifest_paths_are_relative_to_base() {
        let m = parse_manifest(
            "pair_id,pre_file,post_file,target_smiles\np1,a.csv,b.csv,CCO\n",
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(m[0].pre_file, Path::new("/data/a.csv"));
        assert_eq!(m[0].target_smiles, "CCO");
    }
}

//! Distribution and similarity metrics for a set of generated molecules.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use crate::molgraph::{is_valid, largest_component, write_smiles, Element, MolecularGraph};

use super::fingerprint::{morgan_fingerprint, tanimoto_counts, Fingerprint};
use super::scaffold::{bemis_murcko, Scaffold};
use super::{ChemError, DEFAULT_RADIUS, FINGERPRINT_BITS};

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub validity: f64,
    pub uniqueness: f64,
    pub coverage: f64,
    pub morgan_sim: f64,
    pub scaffold_unique: f64,
    pub scaffold_novelty: f64,
    pub internal_diversity: f64,
}

impl MetricReport {
    pub const KEYS: [&'static str; 7] = [
        "validity",
        "uniqueness",
        "coverage",
        "morgan_sim",
        "scaffold_unique",
        "scaffold_novelty",
        "internal_diversity",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.validity,
            self.uniqueness,
            self.coverage,
            self.morgan_sim,
            self.scaffold_unique,
            self.scaffold_novelty,
            self.internal_diversity,
        ]
    }

    /// `key = value` lines in the stable key order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(self.values()) {
            let _ = writeln!(out, "{k} = {v:.6}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ChemError> {
        let mut vals = [f64::NAN; 7];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ChemError::Format(line.to_string()))?;
            let idx = Self::KEYS
                .iter()
                .position(|&key| key == k.trim())
                .ok_or_else(|| ChemError::Format(k.trim().to_string()))?;
            vals[idx] = v
                .trim()
                .parse()
                .map_err(|_| ChemError::Format(v.trim().to_string()))?;
        }
        if let Some(i) = vals.iter().position(|v| v.is_nan()) {
            return Err(ChemError::Format(format!("missing {}", Self::KEYS[i])));
        }
        Ok(MetricReport {
            validity: vals[0],
            uniqueness: vals[1],
            coverage: vals[2],
            morgan_sim: vals[3],
            scaffold_unique: vals[4],
            scaffold_novelty: vals[5],
            internal_diversity: vals[6],
        })
    }
}

/// How generated molecules are matched to references for `morgan_sim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pairing {
    /// `generated[i]` is compared with `reference[i]`.
    Paired,
    /// Each generated molecule takes its best match in the reference set.
    BestMatch,
}

struct Prepared {
    smiles: String,
    fp: Fingerprint,
    scaffold: Scaffold,
    elements: BTreeSet<Element>,
}

fn prepare(g: &MolecularGraph) -> Option<Prepared> {
    if !is_valid(g) {
        return None;
    }
    let comp = largest_component(g);
    let fp = morgan_fingerprint(&comp, DEFAULT_RADIUS, FINGERPRINT_BITS).ok()?;
    let scaffold = bemis_murcko(&comp).ok()?;
    Some(Prepared {
        smiles: write_smiles(&comp),
        fp,
        scaffold,
        elements: comp.atoms().iter().map(|a| a.element).collect(),
    })
}

/// Best-match similarity when no pairing is requested.
pub fn metric_suite(
    generated: &[MolecularGraph],
    reference: &[MolecularGraph],
    training_scaffolds: &HashSet<Scaffold>,
) -> Result<MetricReport, ChemError> {
    metric_suite_with(generated, reference, training_scaffolds, Pairing::BestMatch)
}

/// Metrics over the valid generated molecules (largest component of each).
/// `morgan_sim` averages over valid generated molecules; a paired molecule
/// whose reference fails to fingerprint falls back to best match.
pub fn metric_suite_with(
    generated: &[MolecularGraph],
    reference: &[MolecularGraph],
    training_scaffolds: &HashSet<Scaffold>,
    pairing: Pairing,
) -> Result<MetricReport, ChemError> {
    if generated.is_empty() {
        return Err(ChemError::EmptyInput);
    }
    if pairing == Pairing::Paired && reference.len() != generated.len() {
        return Err(ChemError::LengthMismatch(generated.len(), reference.len()));
    }
    let prepared: Vec<Option<Prepared>> = generated.iter().map(prepare).collect();
    let ref_fps: Vec<Option<Fingerprint>> = reference
        .iter()
        .map(|r| {
            let comp = largest_component(r);
            morgan_fingerprint(&comp, DEFAULT_RADIUS, FINGERPRINT_BITS).ok()
        })
        .collect();

    let valid: Vec<(usize, &Prepared)> = prepared
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.as_ref().map(|p| (i, p)))
        .collect();
    let n_valid = valid.len();
    let validity = n_valid as f64 / generated.len() as f64;
    if n_valid == 0 {
        return Ok(MetricReport {
            validity,
            uniqueness: 0.0,
            coverage: 0.0,
            morgan_sim: 0.0,
            scaffold_unique: 0.0,
            scaffold_novelty: 0.0,
            internal_diversity: 0.0,
        });
    }

    let distinct: HashSet<&str> = valid.iter().map(|(_, p)| p.smiles.as_str()).collect();
    let uniqueness = distinct.len() as f64 / n_valid as f64;

    let elements: BTreeSet<Element> = valid
        .iter()
        .flat_map(|(_, p)| p.elements.iter().copied())
        .collect();
    let coverage = elements.len() as f64 / Element::COUNT as f64;

    let best_match = |fp: &Fingerprint| {
        ref_fps
            .iter()
            .flatten()
            .filter_map(|r| tanimoto_counts(fp, r).ok())
            .fold(0.0f64, f64::max)
    };
    let mut sim_sum = 0.0;
    for &(i, p) in &valid {
        let s = match pairing {
            Pairing::Paired => match &ref_fps[i] {
                Some(r) => tanimoto_counts(&p.fp, r).unwrap_or(0.0),
                None => best_match(&p.fp),
            },
            Pairing::BestMatch => best_match(&p.fp),
        };
        sim_sum += s;
    }
    let morgan_sim = if reference.is_empty() {
        0.0
    } else {
        sim_sum / n_valid as f64
    };

    let scaffolds: BTreeSet<&Scaffold> = valid.iter().map(|(_, p)| &p.scaffold).collect();
    let scaffold_unique = scaffolds.len() as f64 / n_valid as f64;
    let novel = scaffolds
        .iter()
        .filter(|s| !training_scaffolds.contains(**s))
        .count();
    let scaffold_novelty = novel as f64 / scaffolds.len() as f64;

    // Fixed i<j order keeps the sum reproducible.
    let mut div_sum = 0.0;
    let mut pairs = 0usize;
    for a in 0..n_valid {
        for b in a + 1..n_valid {
            let t = tanimoto_counts(&valid[a].1.fp, &valid[b].1.fp).unwrap_or(0.0);
            div_sum += 1.0 - t;
            pairs += 1;
        }
    }
    let internal_diversity = if pairs == 0 {
        0.0
    } else {
        div_sum / pairs as f64
    };

    Ok(MetricReport {
        validity,
        uniqueness,
        coverage,
        morgan_sim,
        scaffold_unique,
        scaffold_novelty,
        internal_diversity,
    })
}

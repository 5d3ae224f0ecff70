//! Fingerprint database with exact Top-K min-max Tanimoto retrieval.
//!
//! Candidates are visited in decreasing order of the bound
//! `min(Σq, Σx) / max(Σq, Σx)`, which no record can exceed, and the scan
//! stops once the bound falls below the current k-th score. Every surviving
//! candidate is rescored exactly, so results equal a full linear scan.

mod format;

use std::collections::HashSet;

use crate::chem::{morgan_fingerprint, DEFAULT_RADIUS, FINGERPRINT_BITS};
use crate::corpus::read_smiles_lines;
use crate::molgraph::{parse_smiles, write_smiles};

pub use format::{FPDB_MAGIC, FPDB_VERSION};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScreenError {
    #[error("no parsable molecules in the corpus")]
    EmptyCorpus,
    #[error("k must lie in 1..={max}, got {k}")]
    BadK { k: usize, max: usize },
    #[error("query is all zero after clamping negatives")]
    ZeroQuery,
    #[error("query has {0} entries, expected {FINGERPRINT_BITS}")]
    DimMismatch(usize),
    #[error("query contains a non-finite entry")]
    NonFiniteQuery,
    #[error("ground-truth id {0} is not in the database")]
    UnknownGroundTruth(String),
    #[error("id {0} appears twice")]
    DuplicateId(String),
    #[error("corrupt database file: {0}")]
    CorruptFile(String),
    #[error("database version {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DbRecord {
    pub id: String,
    /// Canonical SMILES.
    pub smiles: String,
    pub counts: Vec<u16>,
}

/// Immutable database plus the per-record data used for pruning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FingerprintDb {
    records: Vec<DbRecord>,
    totals: Vec<u64>,
    /// Record indices by descending total count.
    by_total: Vec<usize>,
    sparse: Vec<Vec<(u16, u16)>>,
}

/// Counts from a corpus build.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub lines: usize,
    pub records: usize,
    pub unparsable: usize,
    pub duplicates: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// One row of a screening evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub k: usize,
    pub mean_similarity: f64,
    pub hit_rate: f64,
}

impl FingerprintDb {
    pub fn from_records(records: Vec<DbRecord>) -> Result<Self, ScreenError> {
        if records.is_empty() {
            return Err(ScreenError::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        for r in &records {
            if r.counts.len() != FINGERPRINT_BITS {
                return Err(ScreenError::CorruptFile(format!("record {} has {} bits", r.id, r.counts.len())));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(ScreenError::DuplicateId(r.id.clone()));
            }
        }
        let totals: Vec<u64> = records
            .iter()
            .map(|r| r.counts.iter().map(|&c| c as u64).sum())
            .collect();
        let sparse = records
            .iter()
            .map(|r| {
                r.counts
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(d, &c)| (d as u16, c))
                    .collect()
            })
            .collect();
        let mut by_total: Vec<usize> = (0..records.len()).collect();
        by_total.sort_by(|&a, &b| totals[b].cmp(&totals[a]).then(a.cmp(&b)));
        Ok(FingerprintDb {
            records,
            totals,
            by_total,
            sparse,
        })
    }

    pub fn records(&self) -> &[DbRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn find(&self, id: &str) -> Option<&DbRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    fn score(&self, q: &[f64], q_total: f64, i: usize) -> f64 {
        let num: f64 = self.sparse[i]
            .iter()
            .map(|&(d, c)| q[d as usize].min(c as f64))
            .sum();
        // Σmax = Σq + Σx − Σmin.
        let den = q_total + self.totals[i] as f64 - num;
        num / den
    }

    /// Exhaustive reference scan with the same scoring and ordering.
    pub fn query_linear(&self, query: &[f64], k: usize) -> Result<Vec<Hit>, ScreenError> {
        let (q, total) = self.prepare(query, k)?;
        let mut all: Vec<(f64, usize)> = (0..self.len()).map(|i| (self.score(&q, total, i), i)).collect();
        all.sort_by(|a, b| self.rank(a, b));
        Ok(self.hits(&all[..k]))
    }

    /// Top-`k` records by min-max Tanimoto, ties by ascending id.
    pub fn query_topk(&self, query: &[f64], k: usize) -> Result<Vec<Hit>, ScreenError> {
        let (q, total) = self.prepare(query, k)?;
        // Visit records in descending bound order: those with totals nearest
        // the query's first. Walk outwards from the insertion point.
        let pos = self.by_total.partition_point(|&i| self.totals[i] as f64 > total);
        let bound = |i: usize| {
            let x = self.totals[i] as f64;
            x.min(total) / x.max(total)
        };
        let (mut lo, mut hi) = (pos, pos);
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        loop {
            let next_lo = (lo > 0).then(|| self.by_total[lo - 1]);
            let next_hi = (hi < self.by_total.len()).then(|| self.by_total[hi]);
            let pick = match (next_lo, next_hi) {
                (None, None) => break,
                (Some(a), None) => (a, true),
                (None, Some(b)) => (b, false),
                (Some(a), Some(b)) => {
                    if bound(a) >= bound(b) {
                        (a, true)
                    } else {
                        (b, false)
                    }
                }
            };
            let (i, from_lo) = pick;
            if best.len() == k {
                // Slack absorbs rounding between the bound and the exact score.
                let kth = best[k - 1].0;
                if bound(i) * (1.0 + 1e-12) + 1e-15 < kth {
                    break;
                }
            }
            if from_lo {
                lo -= 1;
            } else {
                hi += 1;
            }
            let cand = (self.score(&q, total, i), i);
            let at = best.partition_point(|e| self.rank(e, &cand).is_lt());
            if at < k {
                best.insert(at, cand);
                best.truncate(k);
            }
        }
        Ok(self.hits(&best))
    }

    fn rank(&self, a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
        b.0.total_cmp(&a.0)
            .then_with(|| self.records[a.1].id.cmp(&self.records[b.1].id))
    }

    fn hits(&self, ranked: &[(f64, usize)]) -> Vec<Hit> {
        ranked
            .iter()
            .map(|&(score, i)| Hit {
                id: self.records[i].id.clone(),
                score,
            })
            .collect()
    }

    fn prepare(&self, query: &[f64], k: usize) -> Result<(Vec<f64>, f64), ScreenError> {
        if k == 0 || k > self.len() {
            return Err(ScreenError::BadK { k, max: self.len() });
        }
        if query.len() != FINGERPRINT_BITS {
            return Err(ScreenError::DimMismatch(query.len()));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(ScreenError::NonFiniteQuery);
        }
        let negatives = query.iter().filter(|&&v| v < 0.0).count();
        if negatives > 0 {
            log::warn!("clamped {negatives} negative query entries to 0");
        }
        let q: Vec<f64> = query.iter().map(|&v| v.max(0.0)).collect();
        let total: f64 = q.iter().sum();
        if total == 0.0 {
            return Err(ScreenError::ZeroQuery);
        }
        Ok((q, total))
    }
}

/// Fingerprints a SMILES corpus, deduplicating by canonical SMILES (the
/// first id wins). Unparsable lines and graphs failing valence are skipped.
pub fn build_db(corpus: &str) -> Result<(FingerprintDb, BuildReport), ScreenError> {
    let lines = read_smiles_lines(corpus);
    let mut report = BuildReport {
        lines: lines.len(),
        ..Default::default()
    };
    let mut seen_smiles = HashSet::new();
    let mut records = Vec::new();
    for rec in lines {
        let fp = parse_smiles(&rec.smiles)
            .ok()
            .and_then(|g| Some((write_smiles(&g), morgan_fingerprint(&g, DEFAULT_RADIUS, FINGERPRINT_BITS).ok()?)));
        let Some((canon, fp)) = fp else {
            log::warn!("line {}: skipping unparsable SMILES {}", rec.line, rec.smiles);
            report.unparsable += 1;
            continue;
        };
        if !seen_smiles.insert(canon.clone()) {
            report.duplicates += 1;
            continue;
        }
        records.push(DbRecord {
            id: rec.id,
            smiles: canon,
            counts: fp.counts().iter().map(|&c| c.min(u16::MAX as u32) as u16).collect(),
        });
    }
    report.records = records.len();
    Ok((FingerprintDb::from_records(records)?, report))
}

/// Per `k`: the mean over queries of the average score of the top `k`, and
/// the fraction of queries whose ground truth is among them.
pub fn screen_eval(
    db: &FingerprintDb,
    queries: &[(Vec<f64>, String)],
    ks: &[usize],
) -> Result<Vec<EvalRow>, ScreenError> {
    if let Some((_, id)) = queries.iter().find(|(_, id)| db.find(id).is_none()) {
        return Err(ScreenError::UnknownGroundTruth(id.clone()));
    }
    let kmax = ks.iter().copied().max().unwrap_or(0);
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > db.len()) {
        return Err(ScreenError::BadK { k, max: db.len() });
    }
    let results: Vec<Vec<Hit>> = queries
        .iter()
        .map(|(q, _)| db.query_topk(q, kmax))
        .collect::<Result<_, _>>()?;
    let n = queries.len().max(1) as f64;
    Ok(ks
        .iter()
        .map(|&k| {
            let mut sim = 0.0;
            let mut hits = 0usize;
            for (r, (_, truth)) in results.iter().zip(queries) {
                sim += r[..k].iter().map(|h| h.score).sum::<f64>() / k as f64;
                hits += r[..k].iter().any(|h| &h.id == truth) as usize;
            }
            EvalRow {
                k,
                mean_similarity: sim / n,
                hit_rate: hits as f64 / n,
            }
        })
        .collect())
}

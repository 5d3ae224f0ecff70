//! Fingerprints, similarity, scaffolds and the generation metric suite.

mod fingerprint;
mod metrics;
mod scaffold;

pub use fingerprint::{
    environment_ids, morgan_fingerprint, tanimoto, tanimoto_counts, Fingerprint, DEFAULT_RADIUS,
    FINGERPRINT_BITS,
};
pub use metrics::{metric_suite, metric_suite_with, MetricReport, Pairing};
pub use scaffold::{bemis_murcko, scaffold_graph, Scaffold};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChemError {
    #[error("graph fails the valence table")]
    InvalidGraph,
    #[error("fingerprint width must be positive")]
    InvalidBits,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("negative or non-finite entry")]
    Negative,
    #[error("both vectors are all zero")]
    BothZero,
    #[error("no generated molecules")]
    EmptyInput,
    #[error("malformed report entry: {0}")]
    Format(String),
}

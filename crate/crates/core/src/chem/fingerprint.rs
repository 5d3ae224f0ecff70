//! Morgan (circular) count fingerprints and min-max Tanimoto similarity.
//!
//! Environment identifiers are built with a fixed SplitMix64-style mixer so
//! fingerprints are stable across platforms and releases:
//!
//! * radius 0: `mix(element, degree, hydrogens, charge, aromatic, ring)`
//! * radius r: `mix(previous id, sorted [(bond category, neighbor id)])`
//!
//! Every atom contributes one count per radius (no duplicate-substructure
//! removal), folded into `n_bits` buckets by `id % n_bits`.

use crate::molgraph::MolecularGraph;

use super::ChemError;

pub const FINGERPRINT_BITS: usize = 2048;
pub const DEFAULT_RADIUS: usize = 2;

/// Count vector over hashed atom environments.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    counts: Vec<u32>,
}

impl Fingerprint {
    pub fn from_counts(counts: Vec<u32>) -> Self {
        Fingerprint { counts }
    }

    pub fn zeros(n_bits: usize) -> Self {
        Fingerprint {
            counts: vec![0; n_bits],
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Non-zero buckets as `(index, count)`.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c))
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(seed: u64, values: impl IntoIterator<Item = u64>) -> u64 {
    values
        .into_iter()
        .fold(splitmix(seed), |h, v| splitmix(h ^ splitmix(v)))
}

/// Per-atom environment identifiers for radii `0..=radius`.
pub fn environment_ids(g: &MolecularGraph, radius: usize) -> Vec<Vec<u64>> {
    let ring = g.ring_atoms();
    let mut current: Vec<u64> = g
        .atoms()
        .iter()
        .enumerate()
        .map(|(a, atom)| {
            mix(
                0,
                [
                    atom.element.index() as u64,
                    g.degree(a) as u64,
                    atom.explicit_h as u64,
                    (atom.formal_charge as i64) as u64,
                    atom.aromatic as u64,
                    ring[a] as u64,
                ],
            )
        })
        .collect();
    let mut layers = vec![current.clone()];
    for r in 1..=radius {
        let next: Vec<u64> = (0..g.atom_count())
            .map(|a| {
                let mut nb: Vec<(u64, u64)> = g
                    .neighbors(a)
                    .iter()
                    .map(|&(x, bi)| (g.bonds()[bi].order.category() as u64, current[x]))
                    .collect();
                nb.sort_unstable();
                mix(
                    r as u64,
                    std::iter::once(current[a]).chain(nb.into_iter().flat_map(|(o, id)| [o, id])),
                )
            })
            .collect();
        layers.push(next.clone());
        current = next;
    }
    layers
}

/// Morgan count fingerprint with `radius` iterations folded to `n_bits`.
/// The graph must pass the valence table; raw generated graphs go through
/// `is_valid` first.
pub fn morgan_fingerprint(
    g: &MolecularGraph,
    radius: usize,
    n_bits: usize,
) -> Result<Fingerprint, ChemError> {
    if n_bits == 0 {
        return Err(ChemError::InvalidBits);
    }
    if crate::molgraph::check_valence(g).is_err() {
        return Err(ChemError::InvalidGraph);
    }
    let mut counts = vec![0u32; n_bits];
    for layer in environment_ids(g, radius) {
        for id in layer {
            counts[(id % n_bits as u64) as usize] += 1;
        }
    }
    Ok(Fingerprint { counts })
}

/// Min-max Tanimoto: `sum(min) / sum(max)`. Equals the set Tanimoto on 0/1
/// vectors.
pub fn tanimoto(a: &[f64], b: &[f64]) -> Result<f64, ChemError> {
    if a.len() != b.len() {
        return Err(ChemError::LengthMismatch(a.len(), b.len()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        if !(x >= 0.0 && y >= 0.0) {
            return Err(ChemError::Negative);
        }
        num += x.min(y);
        den += x.max(y);
    }
    if den == 0.0 {
        return Err(ChemError::BothZero);
    }
    Ok(num / den)
}

/// Integer-exact Tanimoto on count fingerprints.
pub fn tanimoto_counts(a: &Fingerprint, b: &Fingerprint) -> Result<f64, ChemError> {
    if a.len() != b.len() {
        return Err(ChemError::LengthMismatch(a.len(), b.len()));
    }
    let (mut num, mut den) = (0u64, 0u64);
    for (&x, &y) in a.counts.iter().zip(&b.counts) {
        num += x.min(y) as u64;
        den += x.max(y) as u64;
    }
    if den == 0 {
        return Err(ChemError::BothZero);
    }
    Ok(num as f64 / den as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn fp(s: &str, r: usize) -> Fingerprint {
        morgan_fingerprint(&parse_smiles(s).unwrap(), r, FINGERPRINT_BITS).unwrap()
    }

    #[test]
    fn methane_radius_zero() {
        let f = fp("C", 0);
        let nz: Vec<_> = f.nonzero().collect();
        assert_eq!(nz.len(), 1);
        assert_eq!(nz[0].1, 1);
    }

    #[test]
    fn benzene_radius_one() {
        // All six atoms are equivalent, so each radius yields one
        // environment class with count 6.
        let g = parse_smiles("c1ccccc1").unwrap();
        let ids = environment_ids(&g, 1);
        for layer in &ids {
            assert!(layer.iter().all(|&x| x == layer[0]));
        }
        assert_ne!(ids[0][0], ids[1][0]);
        let f = fp("c1ccccc1", 1);
        assert_eq!(f.total(), 12);
        assert!(f.nonzero().all(|(_, c)| c % 6 == 0));
    }

    #[test]
    fn tanimoto_examples() {
        let a = vec![1.0, 2.0, 0.0];
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        assert_eq!(tanimoto(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let mut x = vec![0.0; 6];
        let mut y = vec![0.0; 6];
        for i in [1, 2, 3] {
            x[i] = 1.0;
        }
        for i in [2, 3, 4] {
            y[i] = 1.0;
        }
        assert_eq!(tanimoto(&x, &y).unwrap(), 0.5);
        assert_eq!(tanimoto(&[0.0, 0.0], &[0.0, 0.0]), Err(ChemError::BothZero));
        assert!(tanimoto(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn counts_and_float_routes_agree() {
        let a = fp("CC(=O)Oc1ccccc1C(=O)O", 2);
        let b = fp("c1ccccc1C(=O)O", 2);
        let x = tanimoto_counts(&a, &b).unwrap();
        let y = tanimoto(&a.to_f64(), &b.to_f64()).unwrap();
        assert!((x - y).abs() < 1e-15);
    }
}

use std::fmt;

use crate::molgraph::{check_valence, parse_smiles, write_smiles, MolecularGraph};

use super::ChemError;

/// Bemis-Murcko scaffold as canonical SMILES. The empty string is the
/// `EMPTY` scaffold of acyclic molecules.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scaffold {
    canonical_smiles: String,
}

impl Scaffold {
    pub const EMPTY_MARKER: &'static str = "EMPTY";

    pub fn empty() -> Self {
        Scaffold {
            canonical_smiles: String::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.canonical_smiles.is_empty()
    }

    pub fn canonical_smiles(&self) -> &str {
        &self.canonical_smiles
    }

    /// Heavy atoms in the scaffold (0 for `EMPTY`).
    pub fn heavy_atoms(&self) -> usize {
        if self.is_empty() {
            return 0;
        }
        parse_smiles(&self.canonical_smiles)
            .map(|g| g.atom_count())
            .unwrap_or(0)
    }

    /// Parses the textual form used in files (`EMPTY` or canonical SMILES).
    pub fn from_text(s: &str) -> Result<Self, ChemError> {
        if s == Self::EMPTY_MARKER || s.is_empty() {
            return Ok(Scaffold::empty());
        }
        let g = parse_smiles(s).map_err(|_| ChemError::InvalidGraph)?;
        Ok(Scaffold {
            canonical_smiles: write_smiles(&g),
        })
    }
}

impl fmt::Display for Scaffold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            f.write_str(Self::EMPTY_MARKER)
        } else {
            f.write_str(&self.canonical_smiles)
        }
    }
}

/// Scaffold graph: repeatedly strips degree-1 atoms (which are never ring
/// atoms) until none remain. Hydrogens of the surviving attachment atoms
/// absorb the removed bond orders so the result stays chemically sensible.
pub fn scaffold_graph(g: &MolecularGraph) -> MolecularGraph {
    let n = g.atom_count();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|a| g.degree(a)).collect();
    let mut extra_h = vec![0u32; n];
    let mut queue: Vec<usize> = (0..n).filter(|&a| degree[a] <= 1).collect();
    while let Some(a) = queue.pop() {
        if !alive[a] || degree[a] > 1 {
            continue;
        }
        alive[a] = false;
        for &(x, bi) in g.neighbors(a) {
            if alive[x] {
                degree[x] -= 1;
                extra_h[x] += g.bonds()[bi].order.half_units() / 2;
                if degree[x] <= 1 {
                    queue.push(x);
                }
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&a| alive[a]).collect();
    let mut sub = g.subgraph(&keep);
    for (new, &old) in keep.iter().enumerate() {
        let atom = sub.atom_mut(new);
        atom.explicit_h = (atom.explicit_h as u32 + extra_h[old]).min(u8::MAX as u32) as u8;
    }
    sub
}

pub fn bemis_murcko(g: &MolecularGraph) -> Result<Scaffold, ChemError> {
    if check_valence(g).is_err() {
        return Err(ChemError::InvalidGraph);
    }
    let sub = scaffold_graph(g);
    if sub.is_empty() {
        return Ok(Scaffold::empty());
    }
    Ok(Scaffold {
        canonical_smiles: write_smiles(&sub),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bm(s: &str) -> Scaffold {
        bemis_murcko(&parse_smiles(s).unwrap()).unwrap()
    }

    /// Independent pruning oracle: delete one leaf at a time by scanning.
    fn pruned_atom_count(s: &str) -> usize {
        let g = parse_smiles(s).unwrap();
        let mut alive = vec![true; g.atom_count()];
        loop {
            let leaf = (0..g.atom_count()).find(|&a| {
                alive[a] && g.neighbors(a).iter().filter(|&&(x, _)| alive[x]).count() <= 1
            });
            match leaf {
                Some(a) => alive[a] = false,
                None => break,
            }
        }
        alive.iter().filter(|&&x| x).count()
    }

    #[test]
    fn benzene_is_fixed_point() {
        assert_eq!(bm("c1ccccc1").canonical_smiles(), "c1ccccc1");
    }

    #[test]
    fn toluene_to_benzene() {
        assert_eq!(bm("Cc1ccccc1"), bm("c1ccccc1"));
        assert_eq!(pruned_atom_count("Cc1ccccc1"), 6);
    }

    #[test]
    fn acyclic_is_empty() {
        assert!(bm("CCCCCC").is_empty());
        assert_eq!(bm("CCCCCC").to_string(), "EMPTY");
        assert_eq!(pruned_atom_count("CCCCCC"), 0);
    }

    #[test]
    fn linker_is_kept() {
        let s = bm("c1ccccc1CCc1ccncc1CC(=O)O");
        let g = parse_smiles(s.canonical_smiles()).unwrap();
        assert_eq!(g.atom_count(), pruned_atom_count("c1ccccc1CCc1ccncc1CC(=O)O"));
        assert_eq!(g.atom_count(), 14);
    }

    #[test]
    fn idempotent_on_examples() {
        for s in ["Cc1ccccc1", "CN1CCC(CC1)c1ccccc1", "c1ccc2ccccc2c1CCO", "Cn1cccc1"] {
            let once = bm(s);
            let twice = bm(once.canonical_smiles());
            assert_eq!(once, twice, "{s}");
        }
    }
}

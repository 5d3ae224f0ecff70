//! Molecular graphs: typed atoms and bonds, SMILES reading and writing,
//! valence rules and canonical atom ranking.

mod canon;
mod iso;
mod parse;
mod valence;
mod write;

use std::fmt;

pub use canon::canonical_ranks;
pub use iso::is_isomorphic;
pub use parse::{parse_smiles, ParseError, ParseErrorKind};
pub use valence::{check_valence, implicit_hydrogens, max_valence};
pub use write::write_smiles;

/// The heavy-atom vocabulary. Order is the node-category order used by the
/// diffusion state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    B,
    C,
    N,
    O,
    F,
    Si,
    P,
    S,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 11] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::Si,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub const COUNT: usize = 11;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Element> {
        Self::ALL.get(i).copied()
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::Si => "Si",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Element> {
        Self::ALL.iter().copied().find(|e| e.symbol() == s)
    }

    /// Elements that may be written without brackets.
    pub fn is_organic_subset(self) -> bool {
        !matches!(self, Element::Si)
    }

    /// Elements with a lowercase aromatic SMILES form.
    pub fn has_aromatic_form(self) -> bool {
        matches!(
            self,
            Element::B | Element::C | Element::N | Element::O | Element::P | Element::S
        )
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    pub aromatic: bool,
    /// Attached hydrogen count (explicit in the graph, whether it was written
    /// in brackets or filled in from the default valence).
    pub explicit_h: u8,
}

impl Atom {
    pub fn new(element: Element) -> Self {
        Atom {
            element,
            formal_charge: 0,
            aromatic: false,
            explicit_h: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Edge category index; 0 is reserved for "no bond".
    pub fn category(self) -> usize {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn from_category(c: usize) -> Option<BondOrder> {
        match c {
            1 => Some(BondOrder::Single),
            2 => Some(BondOrder::Double),
            3 => Some(BondOrder::Triple),
            4 => Some(BondOrder::Aromatic),
            _ => None,
        }
    }

    /// Bond order in half-units (aromatic = 3).
    pub fn half_units(self) -> u32 {
        match self {
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Aromatic => 3,
        }
    }
}

/// Number of edge categories including "no bond".
pub const EDGE_CATEGORIES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("bond endpoint {0} out of range")]
    BadEndpoint(usize),
    #[error("self bond on atom {0}")]
    SelfBond(usize),
    #[error("duplicate bond between {0} and {1}")]
    DuplicateBond(usize, usize),
}

/// Attributed simple graph. Construction checks the structural invariants
/// (endpoints in range, no loops, no multi-edges) but not valence, so raw
/// generated graphs are representable; `check_valence` covers chemistry.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MolecularGraph {
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, GraphError> {
        let n = atoms.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut normalized = Vec::with_capacity(bonds.len());
        for (bi, b) in bonds.into_iter().enumerate() {
            if b.i >= n {
                return Err(GraphError::BadEndpoint(b.i));
            }
            if b.j >= n {
                return Err(GraphError::BadEndpoint(b.j));
            }
            if b.i == b.j {
                return Err(GraphError::SelfBond(b.i));
            }
            if adjacency[b.i].iter().any(|&(nb, _)| nb == b.j) {
                return Err(GraphError::DuplicateBond(b.i, b.j));
            }
            adjacency[b.i].push((b.j, bi));
            adjacency[b.j].push((b.i, bi));
            normalized.push(Bond {
                i: b.i.min(b.j),
                j: b.i.max(b.j),
                order: b.order,
            });
        }
        Ok(MolecularGraph {
            atoms,
            bonds: normalized,
            adjacency,
        })
    }

    /// Builds a graph from a raw skeleton, marking atoms aromatic when they
    /// carry an aromatic bond and filling hydrogens up to the default valence.
    /// This is how decoded diffusion samples become molecules.
    pub fn from_skeleton(elements: &[Element], bonds: Vec<Bond>) -> Result<Self, GraphError> {
        let atoms = elements.iter().map(|&e| Atom::new(e)).collect();
        let mut g = MolecularGraph::new(atoms, bonds)?;
        for b in g.bonds.clone() {
            if b.order == BondOrder::Aromatic {
                g.atoms[b.i].aromatic = true;
                g.atoms[b.j].aromatic = true;
            }
        }
        for a in 0..g.atoms.len() {
            g.atoms[a].explicit_h = implicit_hydrogens(&g, a);
        }
        Ok(g)
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Neighbors of `a` as `(atom, bond index)` pairs.
    pub fn neighbors(&self, a: usize) -> &[(usize, usize)] {
        &self.adjacency[a]
    }

    pub fn degree(&self, a: usize) -> usize {
        self.adjacency[a].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a]
            .iter()
            .find(|&&(nb, _)| nb == b)
            .map(|&(_, bi)| &self.bonds[bi])
    }

    /// Connected components, each sorted ascending; components ordered by
    /// their smallest atom index.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut k = 0;
            while k < comp.len() {
                let a = comp[k];
                for &(nb, _) in &self.adjacency[a] {
                    if !seen[nb] {
                        seen[nb] = true;
                        comp.push(nb);
                    }
                }
                k += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Induced subgraph on `keep` (atom order preserved as given).
    pub fn subgraph(&self, keep: &[usize]) -> MolecularGraph {
        let mut map = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let atoms = keep.iter().map(|&a| self.atoms[a]).collect();
        let bonds = self
            .bonds
            .iter()
            .filter(|b| map[b.i] != usize::MAX && map[b.j] != usize::MAX)
            .map(|b| Bond {
                i: map[b.i],
                j: map[b.j],
                order: b.order,
            })
            .collect();
        MolecularGraph::new(atoms, bonds).expect("induced subgraph of a simple graph is simple")
    }

    /// Relabels atoms: atom `a` of `self` becomes atom `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> MolecularGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = vec![self.atoms[0]; self.atoms.len()];
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old];
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                i: perm[b.i],
                j: perm[b.j],
                order: b.order,
            })
            .collect();
        MolecularGraph::new(atoms, bonds).expect("permutation preserves simplicity")
    }

    /// Marks every bond that lies on a cycle (i.e. is not a bridge).
    pub fn ring_bonds(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut in_ring = vec![true; self.bonds.len()];
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // Iterative Tarjan bridge finding: (atom, parent bond, next neighbor slot).
            let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&mut (a, pbond, ref mut slot)) = stack.last_mut() {
                if *slot < self.adjacency[a].len() {
                    let (nb, bi) = self.adjacency[a][*slot];
                    *slot += 1;
                    if bi == pbond {
                        continue;
                    }
                    if disc[nb] == usize::MAX {
                        disc[nb] = timer;
                        low[nb] = timer;
                        timer += 1;
                        stack.push((nb, bi, 0));
                    } else {
                        low[a] = low[a].min(disc[nb]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(parent, _, _)) = stack.last() {
                        low[parent] = low[parent].min(low[a]);
                        if low[a] > disc[parent] {
                            in_ring[pbond] = false;
                        }
                    }
                }
            }
        }
        in_ring
    }

    /// Marks atoms incident to at least one ring bond.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let rb = self.ring_bonds();
        let mut out = vec![false; self.atoms.len()];
        for (b, &r) in self.bonds.iter().zip(&rb) {
            if r {
                out[b.i] = true;
                out[b.j] = true;
            }
        }
        out
    }

    /// Sum of bond orders in half-units at `a`.
    pub fn bond_half_units(&self, a: usize) -> u32 {
        self.adjacency[a]
            .iter()
            .map(|&(_, bi)| self.bonds[bi].order.half_units())
            .sum()
    }

    pub(crate) fn atom_mut(&mut self, a: usize) -> &mut Atom {
        &mut self.atoms[a]
    }
}

/// Largest connected component (earliest on ties), atoms in original order.
pub fn largest_component(g: &MolecularGraph) -> MolecularGraph {
    let comps = g.components();
    match comps.iter().enumerate().max_by_key(|(k, c)| (c.len(), std::cmp::Reverse(*k))) {
        Some((_, c)) => g.subgraph(c),
        None => MolecularGraph::default(),
    }
}

/// Validity of a (possibly raw, generated) graph: its largest connected
/// component passes the valence table and survives a write/parse round
/// trip with an unchanged canonical form.
pub fn is_valid(g: &MolecularGraph) -> bool {
    if g.is_empty() {
        return false;
    }
    let comp = largest_component(g);
    if check_valence(&comp).is_err() {
        return false;
    }
    let text = write_smiles(&comp);
    match parse_smiles(&text) {
        Ok(back) => back.atom_count() == comp.atom_count() && write_smiles(&back) == text,
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validity_rules() {
        assert!(is_valid(&parse_smiles("C").unwrap()));
        assert!(!is_valid(&MolecularGraph::default()));
        let c = |e| Atom::new(e);
        let single = |i, j| Bond { i, j, order: BondOrder::Single };
        // Pentavalent carbon.
        let bad = MolecularGraph::from_skeleton(
            &[Element::C; 6],
            (1..6).map(|k| single(0, k)).collect(),
        )
        .unwrap();
        assert!(!is_valid(&bad));
        // Valid 4-atom chain plus a smaller invalid fragment (F=F).
        let mixed = MolecularGraph::new(
            vec![c(Element::C), c(Element::C), c(Element::C), c(Element::O), c(Element::F), c(Element::F)],
            vec![
                single(0, 1),
                single(1, 2),
                single(2, 3),
                Bond { i: 4, j: 5, order: BondOrder::Double },
            ],
        )
        .unwrap();
        assert!(is_valid(&mixed));
        // Same fragments with the invalid one larger.
        let flipped = MolecularGraph::from_skeleton(
            &[Element::C, Element::O, Element::C, Element::C, Element::C, Element::C, Element::C, Element::C],
            vec![
                single(0, 1),
                single(2, 3),
                single(2, 4),
                single(2, 5),
                single(2, 6),
                single(2, 7),
            ],
        )
        .unwrap();
        assert!(!is_valid(&flipped));
        // Aromatic bond outside a ring cannot round-trip.
        let chain = MolecularGraph::from_skeleton(
            &[Element::C, Element::C],
            vec![Bond { i: 0, j: 1, order: BondOrder::Aromatic }],
        )
        .unwrap();
        assert!(!is_valid(&chain));
    }

    #[test]
    fn vocabulary_roundtrip() {
        for (i, e) in Element::ALL.iter().enumerate() {
            assert_eq!(e.index(), i);
            assert_eq!(Element::from_symbol(e.symbol()), Some(*e));
        }
        assert_eq!(Element::COUNT, Element::ALL.len());
    }

    #[test]
    fn rejects_structural_violations() {
        let atoms = vec![Atom::new(Element::C), Atom::new(Element::C)];
        let b = |i, j| Bond {
            i,
            j,
            order: BondOrder::Single,
        };
        assert_eq!(
            MolecularGraph::new(atoms.clone(), vec![b(0, 0)]),
            Err(GraphError::SelfBond(0))
        );
        assert_eq!(
            MolecularGraph::new(atoms.clone(), vec![b(0, 1), b(1, 0)]),
            Err(GraphError::DuplicateBond(1, 0))
        );
        assert_eq!(
            MolecularGraph::new(atoms, vec![b(0, 2)]),
            Err(GraphError::BadEndpoint(2))
        );
    }

    #[test]
    fn ring_bonds_in_fused_system() {
        // Two fused rings plus a pendant methyl: "C1CC2CCC1C2C" style skeleton.
        let g = parse_smiles("CC1CCC2CC1C2").unwrap();
        let rb = g.ring_bonds();
        let pendant = g
            .bonds()
            .iter()
            .position(|b| b.i == 0 || b.j == 0)
            .unwrap();
        assert!(!rb[pendant]);
        assert_eq!(rb.iter().filter(|&&r| r).count(), g.bonds().len() - 1);
    }
}

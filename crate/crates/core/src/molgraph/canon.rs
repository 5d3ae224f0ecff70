use super::MolecularGraph;

/// Invariant class of each atom before any refinement.
fn initial_keys(g: &MolecularGraph) -> Vec<(usize, usize, u8, i8, bool, u32, bool)> {
    let ring = g.ring_atoms();
    g.atoms()
        .iter()
        .enumerate()
        .map(|(a, atom)| {
            (
                atom.element.index(),
                g.degree(a),
                atom.explicit_h,
                atom.formal_charge,
                atom.aromatic,
                g.bond_half_units(a),
                ring[a],
            )
        })
        .collect()
}

/// Dense ranks of `keys` (equal keys share a rank, ranks start at 0).
fn dense_ranks<K: Ord>(keys: &[K]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0; keys.len()];
    let mut r = 0;
    for w in 0..order.len() {
        if w > 0 && keys[order[w]] != keys[order[w - 1]] {
            r += 1;
        }
        ranks[order[w]] = r;
    }
    ranks
}

fn class_count(ranks: &[usize]) -> usize {
    ranks.iter().max().map_or(0, |m| m + 1)
}

/// Neighborhood refinement to a stable partition. Each round keys an atom by
/// its current rank plus the sorted multiset of (neighbor rank, bond order);
/// the current rank leads the key so classes only ever split.
fn refine(g: &MolecularGraph, mut ranks: Vec<usize>) -> Vec<usize> {
    loop {
        let keys: Vec<(usize, Vec<(usize, usize)>)> = (0..g.atom_count())
            .map(|a| {
                let mut nb: Vec<(usize, usize)> = g
                    .neighbors(a)
                    .iter()
                    .map(|&(n, bi)| (ranks[n], g.bonds()[bi].order.category()))
                    .collect();
                nb.sort_unstable();
                (ranks[a], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        if class_count(&next) == class_count(&ranks) {
            return next;
        }
        ranks = next;
    }
}

/// Canonical atom ranks: a permutation of `0..n` that is invariant under
/// atom relabeling. Stable refinement classes that still hold several atoms
/// are split by promoting the lowest-index atom of the lowest tied class,
/// then refining again.
pub fn canonical_ranks(g: &MolecularGraph) -> Vec<usize> {
    let n = g.atom_count();
    if n == 0 {
        return Vec::new();
    }
    let mut ranks = refine(g, dense_ranks(&initial_keys(g)));
    while class_count(&ranks) < n {
        let mut sizes = vec![0usize; n];
        for &r in &ranks {
            sizes[r] += 1;
        }
        let tied = (0..n).find(|&r| sizes[r] > 1).expect("a tied class exists");
        let pick = (0..n)
            .find(|&a| ranks[a] == tied)
            .expect("class is non-empty");
        // Key (rank, 1) for the tied class except the picked atom at (rank, 0).
        let keys: Vec<(usize, u8)> = (0..n)
            .map(|a| (ranks[a], u8::from(ranks[a] == tied && a != pick)))
            .collect();
        ranks = refine(g, dense_ranks(&keys));
    }
    ranks
}

/// Stable refinement classes without tie-breaking.
#[cfg(test)]
fn refinement_classes(g: &MolecularGraph) -> Vec<usize> {
    if g.atom_count() == 0 {
        return Vec::new();
    }
    refine(g, dense_ranks(&initial_keys(g)))
}

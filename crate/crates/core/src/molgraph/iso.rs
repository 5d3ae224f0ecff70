use super::MolecularGraph;

/// Labeled graph isomorphism by backtracking. Atom labels (element, charge,
/// aromatic flag, hydrogens) and bond orders must match. Independent of the
/// canonical ranking, so it serves as an oracle for it.
pub fn is_isomorphic(a: &MolecularGraph, b: &MolecularGraph) -> bool {
    let n = a.atom_count();
    if n != b.atom_count() || a.bonds().len() != b.bonds().len() {
        return false;
    }
    let label = |g: &MolecularGraph, i: usize| {
        let at = g.atoms()[i];
        let mut orders: Vec<usize> = g
            .neighbors(i)
            .iter()
            .map(|&(_, bi)| g.bonds()[bi].order.category())
            .collect();
        orders.sort_unstable();
        (at, orders)
    };
    let la: Vec<_> = (0..n).map(|i| label(a, i)).collect();
    let lb: Vec<_> = (0..n).map(|i| label(b, i)).collect();
    {
        let mut sa = la.iter().map(|(x, o)| (format!("{x:?}"), o.clone())).collect::<Vec<_>>();
        let mut sb = lb.iter().map(|(x, o)| (format!("{x:?}"), o.clone())).collect::<Vec<_>>();
        sa.sort();
        sb.sort();
        if sa != sb {
            return false;
        }
    }
    // Match atoms of `a` in BFS order so each new atom usually has a mapped
    // neighbor, which prunes early.
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        order.push(start);
        let mut k = order.len() - 1;
        while k < order.len() {
            let x = order[k];
            for &(nb, _) in a.neighbors(x) {
                if !seen[nb] {
                    seen[nb] = true;
                    order.push(nb);
                }
            }
            k += 1;
        }
    }
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    extend(a, b, &la, &lb, &order, 0, &mut map, &mut used)
}

#[allow(clippy::too_many_arguments)]
fn extend(
    a: &MolecularGraph,
    b: &MolecularGraph,
    la: &[(super::Atom, Vec<usize>)],
    lb: &[(super::Atom, Vec<usize>)],
    order: &[usize],
    depth: usize,
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let x = order[depth];
    for y in 0..b.atom_count() {
        if used[y] || la[x] != lb[y] {
            continue;
        }
        let consistent = a.neighbors(x).iter().all(|&(nx, bi)| {
            let m = map[nx];
            m == usize::MAX
                || b
                    .bond_between(y, m)
                    .is_some_and(|bb| bb.order == a.bonds()[bi].order)
        });
        // Mapped neighbors of y must be images of neighbors of x.
        let mapped_a = a
            .neighbors(x)
            .iter()
            .filter(|&&(nx, _)| map[nx] != usize::MAX)
            .count();
        let mapped_b = b.neighbors(y).iter().filter(|&&(ny, _)| used[ny]).count();
        if !consistent || mapped_a != mapped_b {
            continue;
        }
        map[x] = y;
        used[y] = true;
        if extend(a, b, la, lb, order, depth + 1, map, used) {
            return true;
        }
        map[x] = usize::MAX;
        used[y] = false;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    #[test]
    fn spelling_variants_are_isomorphic() {
        let a = parse_smiles("OCC").unwrap();
        let b = parse_smiles("CCO").unwrap();
        assert!(is_isomorphic(&a, &b));
        let c = parse_smiles("COC").unwrap();
        assert!(!is_isomorphic(&a, &c));
    }

    #[test]
    fn ring_vs_chain() {
        let a = parse_smiles("C1CCCCC1").unwrap();
        let b = parse_smiles("C=CCCCC").unwrap();
        assert!(!is_isomorphic(&a, &b));
    }
}

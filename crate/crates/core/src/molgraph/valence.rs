use super::{BondOrder, Element, MolecularGraph};

/// Standard valences, ascending. The last entry is the maximum.
fn standard_valences(e: Element) -> &'static [u32] {
    match e {
        Element::B => &[3],
        Element::C => &[4],
        Element::N => &[3],
        Element::O => &[2],
        Element::F | Element::Cl | Element::Br | Element::I => &[1],
        Element::Si => &[4],
        Element::P => &[3, 5],
        Element::S => &[2, 4, 6],
    }
}

pub fn max_valence(e: Element) -> u32 {
    *standard_valences(e).last().expect("non-empty table")
}

/// Bond valence used at atom `a`: non-aromatic orders plus one per aromatic
/// bond. Aromatic atoms may additionally carry one shared double bond; that
/// extra unit is returned separately.
fn bond_valence(g: &MolecularGraph, a: usize) -> (u32, bool) {
    let mut total = 0;
    let mut aromatic = 0;
    for &(_, bi) in g.neighbors(a) {
        match g.bonds()[bi].order {
            BondOrder::Single => total += 1,
            BondOrder::Double => total += 2,
            BondOrder::Triple => total += 3,
            BondOrder::Aromatic => {
                total += 1;
                aromatic += 1;
            }
        }
    }
    (total, aromatic > 0)
}

/// Hydrogens an unbracketed atom receives: fill to the lowest standard
/// valence that accommodates its bonds. Aromatic atoms first try the form
/// with one shared double bond, then the lone-pair donor form (pyrrole N,
/// furan O, thiophene S).
pub fn implicit_hydrogens(g: &MolecularGraph, a: usize) -> u8 {
    let atom = g.atoms()[a];
    let (used, has_aromatic) = bond_valence(g, a);
    let table = standard_valences(atom.element);
    let lowest = table[0];
    if has_aromatic {
        if used < lowest {
            return (lowest - used - 1) as u8;
        }
        return lowest.saturating_sub(used) as u8;
    }
    match table.iter().find(|&&v| v >= used) {
        Some(&v) => (v - used) as u8,
        None => 0,
    }
}

/// Checks the valence rule at every atom; returns the first offending atom.
/// Bonds + hydrogens must not exceed the element maximum widened by
/// |formal charge|. Aromatic bonds count one each here (the donor form), so
/// a fused-ring junction carbon is legal.
pub fn check_valence(g: &MolecularGraph) -> Result<(), usize> {
    for (a, atom) in g.atoms().iter().enumerate() {
        let (used, _) = bond_valence(g, a);
        let allowance = max_valence(atom.element) + atom.formal_charge.unsigned_abs() as u32;
        if used + atom.explicit_h as u32 > allowance {
            return Err(a);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{parse_smiles, Atom, Bond};

    #[test]
    fn implicit_h_for_common_atoms() {
        let g = parse_smiles("CC(=O)N").unwrap();
        let h: Vec<u8> = g.atoms().iter().map(|a| a.explicit_h).collect();
        assert_eq!(h, vec![3, 0, 0, 2]);
        let benz = parse_smiles("c1ccccc1").unwrap();
        assert!(benz.atoms().iter().all(|a| a.explicit_h == 1));
        let thio = parse_smiles("c1ccsc1").unwrap();
        let s = thio.atoms().iter().find(|a| a.element == Element::S).unwrap();
        assert_eq!(s.explicit_h, 0);
        let naph = parse_smiles("c1ccc2ccccc2c1").unwrap();
        assert_eq!(naph.atoms().iter().map(|a| a.explicit_h as u32).sum::<u32>(), 8);
    }

    #[test]
    fn five_bonded_carbon_violates() {
        let mut atoms = vec![Atom::new(Element::C)];
        let mut bonds = Vec::new();
        for k in 1..=5 {
            atoms.push(Atom::new(Element::C));
            bonds.push(Bond {
                i: 0,
                j: k,
                order: BondOrder::Single,
            });
        }
        let g = MolecularGraph::new(atoms, bonds).unwrap();
        assert_eq!(check_valence(&g), Err(0));
    }

    #[test]
    fn charge_widens_allowance() {
        assert!(parse_smiles("C[N+](C)(C)C").is_ok());
        assert!(parse_smiles("CN(C)(C)C").is_err());
    }
}

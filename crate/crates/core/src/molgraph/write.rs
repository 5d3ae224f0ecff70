use std::fmt::Write as _;

use super::canon::canonical_ranks;
use super::valence::implicit_hydrogens;
use super::{BondOrder, MolecularGraph};

/// Canonical SMILES. Components are written in order of their lowest
/// canonical rank, each as a depth-first traversal that starts at that atom
/// and visits neighbors in rank order. Works for any structurally valid
/// graph; valence problems surface only when the output is re-parsed.
pub fn write_smiles(g: &MolecularGraph) -> String {
    let n = g.atom_count();
    if n == 0 {
        return String::new();
    }
    let ranks = canonical_ranks(g);
    let mut by_rank: Vec<usize> = (0..n).collect();
    by_rank.sort_by_key(|&a| ranks[a]);

    let mut w = Writer {
        g,
        ranks: &ranks,
        visited: vec![false; n],
        order: vec![usize::MAX; n],
        children: vec![Vec::new(); n],
        closures: vec![Vec::new(); n],
        closure_bond: vec![false; g.bonds().len()],
        tick: 0,
    };
    let mut roots = Vec::new();
    for &a in &by_rank {
        if !w.visited[a] {
            roots.push(a);
            w.discover(a, usize::MAX);
        }
    }

    let mut out = String::new();
    let mut digits = RingDigits::default();
    let mut open: Vec<Option<(usize, u32)>> = vec![None; g.bonds().len()];
    for (k, &root) in roots.iter().enumerate() {
        if k > 0 {
            out.push('.');
        }
        w.emit(root, &mut out, &mut digits, &mut open);
    }
    out
}

#[derive(Default)]
struct RingDigits {
    in_use: Vec<bool>,
}

impl RingDigits {
    fn take(&mut self) -> u32 {
        match self.in_use.iter().skip(1).position(|&u| !u) {
            Some(p) => {
                self.in_use[p + 1] = true;
                (p + 1) as u32
            }
            None => {
                if self.in_use.is_empty() {
                    self.in_use.push(true); // digit 0 is never used
                }
                self.in_use.push(true);
                (self.in_use.len() - 1) as u32
            }
        }
    }

    fn release(&mut self, d: u32) {
        self.in_use[d as usize] = false;
    }
}

struct Writer<'a> {
    g: &'a MolecularGraph,
    ranks: &'a [usize],
    visited: Vec<bool>,
    order: Vec<usize>,
    children: Vec<Vec<(usize, usize)>>,
    // (partner, bond index) of ring-closure bonds at each atom
    closures: Vec<Vec<(usize, usize)>>,
    closure_bond: Vec<bool>,
    tick: usize,
}

impl Writer<'_> {
    fn sorted_neighbors(&self, a: usize) -> Vec<(usize, usize)> {
        let mut nb = self.g.neighbors(a).to_vec();
        nb.sort_by_key(|&(x, _)| self.ranks[x]);
        nb
    }

    /// First pass: depth-first spanning forest and ring-closure bonds.
    fn discover(&mut self, root: usize, parent_bond: usize) {
        // Explicit stack of (atom, parent bond, neighbor cursor).
        let mut stack = vec![(root, parent_bond, 0usize)];
        self.visited[root] = true;
        self.order[root] = self.tick;
        self.tick += 1;
        while let Some(&mut (a, pb, ref mut cur)) = stack.last_mut() {
            let nb = self.sorted_neighbors(a);
            if *cur >= nb.len() {
                stack.pop();
                continue;
            }
            let (x, bi) = nb[*cur];
            *cur += 1;
            if bi == pb || self.closure_bond[bi] {
                continue;
            }
            if self.visited[x] {
                self.closure_bond[bi] = true;
                self.closures[a].push((x, bi));
                self.closures[x].push((a, bi));
            } else {
                self.visited[x] = true;
                self.order[x] = self.tick;
                self.tick += 1;
                self.children[a].push((x, bi));
                stack.push((x, bi, 0));
            }
        }
    }

    fn atom_text(&self, a: usize, out: &mut String) {
        let atom = self.g.atoms()[a];
        let lower = atom.aromatic && atom.element.has_aromatic_form();
        let sym = if lower {
            atom.element.symbol().to_ascii_lowercase()
        } else {
            atom.element.symbol().to_string()
        };
        let bare = atom.element.is_organic_subset()
            && atom.formal_charge == 0
            && atom.aromatic == lower
            && implicit_hydrogens(self.g, a) == atom.explicit_h;
        if bare {
            out.push_str(&sym);
            return;
        }
        out.push('[');
        out.push_str(&sym);
        match atom.explicit_h {
            0 => {}
            1 => out.push('H'),
            h => {
                let _ = write!(out, "H{h}");
            }
        }
        match atom.formal_charge {
            0 => {}
            1 => out.push('+'),
            -1 => out.push('-'),
            c if c > 0 => {
                let _ = write!(out, "+{c}");
            }
            c => {
                let _ = write!(out, "-{}", -c);
            }
        }
        out.push(']');
    }

    fn bond_text(&self, a: usize, b: usize, bi: usize, out: &mut String) {
        let lower = |x: usize| {
            let at = self.g.atoms()[x];
            at.aromatic && at.element.has_aromatic_form()
        };
        let both = lower(a) && lower(b);
        match self.g.bonds()[bi].order {
            BondOrder::Single if both => out.push('-'),
            BondOrder::Single => {}
            BondOrder::Double => out.push('='),
            BondOrder::Triple => out.push('#'),
            BondOrder::Aromatic if both => {}
            BondOrder::Aromatic => out.push(':'),
        }
    }

    fn emit(
        &self,
        root: usize,
        out: &mut String,
        digits: &mut RingDigits,
        open: &mut [Option<(usize, u32)>],
    ) {
        enum Step {
            Atom(usize),
            Text(String),
        }
        let mut stack = vec![Step::Atom(root)];
        while let Some(step) = stack.pop() {
            let a = match step {
                Step::Text(t) => {
                    out.push_str(&t);
                    continue;
                }
                Step::Atom(a) => a,
            };
            self.atom_text(a, out);
            let mut cl = self.closures[a].clone();
            cl.sort_by_key(|&(x, _)| (self.order[x], self.ranks[x]));
            // Close rings opened by earlier atoms first, then open new ones.
            for &(_, bi) in cl.iter().filter(|&&(x, _)| self.order[x] < self.order[a]) {
                let (_, d) = open[bi].take().expect("ring opened at earlier atom");
                push_digit(out, d);
                digits.release(d);
            }
            for &(x, bi) in cl.iter().filter(|&&(x, _)| self.order[x] > self.order[a]) {
                let d = digits.take();
                open[bi] = Some((a, d));
                self.bond_text(a, x, bi, out);
                push_digit(out, d);
            }
            let kids = &self.children[a];
            // Pushed in reverse so the first child is written first; every
            // child but the last sits in a branch.
            for (k, &(x, bi)) in kids.iter().enumerate().rev() {
                let last = k + 1 == kids.len();
                if !last {
                    stack.push(Step::Text(")".into()));
                }
                stack.push(Step::Atom(x));
                let mut prefix = String::new();
                self.bond_text(a, x, bi, &mut prefix);
                if !prefix.is_empty() {
                    stack.push(Step::Text(prefix));
                }
                if !last {
                    stack.push(Step::Text("(".into()));
                }
            }
        }
    }
}

fn push_digit(out: &mut String, d: u32) {
    if d < 10 {
        let _ = write!(out, "{d}");
    } else {
        let _ = write!(out, "%{d:02}");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{is_isomorphic, parse_smiles};

    fn canon(s: &str) -> String {
        write_smiles(&parse_smiles(s).unwrap())
    }

    #[test]
    fn single_carbon() {
        assert_eq!(canon("C"), "C");
    }

    #[test]
    fn spelling_invariance() {
        assert_eq!(canon("OCC"), canon("CCO"));
        assert_eq!(canon("c1ccccc1C"), canon("Cc1ccccc1"));
        assert_eq!(canon("C(C)(C)O"), canon("CC(O)C"));
    }

    #[test]
    fn round_trips_assorted() {
        for s in [
            "CC(=O)Oc1ccccc1C(=O)O",
            "c1ccc2ccccc2c1",
            "C1CC2CCC1C2",
            "[NH4+].[Cl-]",
            "c1cc[nH]c1",
            "C#N",
            "OC1CCCCC1Br",
            "C[Si](C)(C)C",
            "FC(F)(F)S(=O)(=O)N",
            "C1CCCCCCCCCC1",
        ] {
            let g = parse_smiles(s).unwrap();
            let w = write_smiles(&g);
            let back = parse_smiles(&w).unwrap_or_else(|e| panic!("{s} -> {w}: {e}"));
            assert!(is_isomorphic(&g, &back), "{s} -> {w}");
            assert_eq!(write_smiles(&back), w);
        }
    }

    #[test]
    fn many_ring_digits() {
        // Ten fused cyclopropanes force two-digit closures.
        let s = "C12C3C4C5C6C7C8C9C%10C%11C%12CC%12C%11C%10C9C8C7C6C5C4C3C1C2";
        if let Ok(g) = parse_smiles(s) {
            let w = write_smiles(&g);
            let back = parse_smiles(&w).unwrap();
            assert!(is_isomorphic(&g, &back));
        }
    }
}

//! SMILES reader for the stereo-free subset: organic-subset and bracket
//! atoms (charge and hydrogen count), bond symbols, branches, ring closures
//! including `%nn`, and dot-disconnected components.

use std::collections::BTreeMap;

use super::valence::{check_valence, implicit_hydrogens};
use super::{Atom, Bond, BondOrder, Element, MolecularGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    EmptyInput,
    NonAscii,
    UnbalancedParenthesis,
    UnknownElement,
    UnclosedRing,
    ValenceViolation,
    UnexpectedCharacter,
    /// Stereo marks, isotopes, atom classes and quadruple bonds.
    Unsupported,
    AromaticOutsideRing,
    InvalidRingBond,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?} at byte {offset}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
}

fn err<T>(kind: ParseErrorKind, offset: usize) -> Result<T, ParseError> {
    Err(ParseError { kind, offset })
}

struct RawAtom {
    atom: Atom,
    bracket: bool,
    offset: usize,
}

struct OpenRing {
    atom: usize,
    order: Option<BondOrder>,
    offset: usize,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    atoms: Vec<RawAtom>,
    // (i, j, explicit order)
    bonds: Vec<(usize, usize, Option<BondOrder>)>,
    rings: BTreeMap<u32, OpenRing>,
}

pub fn parse_smiles(text: &str) -> Result<MolecularGraph, ParseError> {
    if text.is_empty() {
        return err(ParseErrorKind::EmptyInput, 0);
    }
    if let Some(p) = text.bytes().position(|b| !b.is_ascii()) {
        return err(ParseErrorKind::NonAscii, p);
    }
    let mut p = Parser {
        s: text.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        bonds: Vec::new(),
        rings: BTreeMap::new(),
    };
    p.run()?;
    p.finish()
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), ParseError> {
        // Stack of branch points: (atom to return to, offset of '(').
        let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
        let mut prev: Option<usize> = None;
        let mut pending: Option<(BondOrder, usize)> = None;
        let mut expect_atom = true;

        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                b'(' => {
                    if prev.is_none() || expect_atom || pending.is_some() {
                        return err(ParseErrorKind::UnexpectedCharacter, at);
                    }
                    branches.push((prev, at));
                    self.pos += 1;
                    expect_atom = true;
                }
                b')' => {
                    if pending.is_some() || expect_atom {
                        return err(ParseErrorKind::UnexpectedCharacter, at);
                    }
                    match branches.pop() {
                        Some((p, _)) => prev = p,
                        None => return err(ParseErrorKind::UnbalancedParenthesis, at),
                    }
                    self.pos += 1;
                    expect_atom = false;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if pending.is_some() || prev.is_none() {
                        return err(ParseErrorKind::UnexpectedCharacter, at);
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    pending = Some((order, at));
                    self.pos += 1;
                }
                b'/' | b'\\' | b'$' | b'@' => return err(ParseErrorKind::Unsupported, at),
                b'.' => {
                    if pending.is_some() || expect_atom || !branches.is_empty() {
                        return err(ParseErrorKind::UnexpectedCharacter, at);
                    }
                    prev = None;
                    self.pos += 1;
                    expect_atom = true;
                }
                b'0'..=b'9' | b'%' => {
                    let Some(cur) = prev else {
                        return err(ParseErrorKind::UnexpectedCharacter, at);
                    };
                    if expect_atom {
                        return err(ParseErrorKind::UnexpectedCharacter, at);
                    }
                    let num = self.ring_number()?;
                    let order = pending.take().map(|(o, _)| o);
                    self.ring_bond(cur, num, order, at)?;
                }
                _ => {
                    let idx = self.atom()?;
                    if let Some(p) = prev {
                        let order = pending.take().map(|(o, _)| o);
                        self.bonds.push((p, idx, order));
                    } else if let Some((_, off)) = pending {
                        return err(ParseErrorKind::UnexpectedCharacter, off);
                    }
                    prev = Some(idx);
                    expect_atom = false;
                }
            }
        }
        if let Some((_, off)) = pending {
            return err(ParseErrorKind::UnexpectedCharacter, off);
        }
        if !branches.is_empty() {
            return err(ParseErrorKind::UnbalancedParenthesis, self.s.len());
        }
        if expect_atom {
            return err(ParseErrorKind::UnexpectedCharacter, self.s.len());
        }
        if let Some(open) = self.rings.values().min_by_key(|o| o.offset) {
            return err(ParseErrorKind::UnclosedRing, open.offset);
        }
        Ok(())
    }

    fn ring_number(&mut self) -> Result<u32, ParseError> {
        let at = self.pos;
        if self.s[at] == b'%' {
            let d = self.s.get(at + 1..at + 3);
            match d {
                Some(&[a, b]) if a.is_ascii_digit() && b.is_ascii_digit() => {
                    self.pos += 3;
                    Ok(((a - b'0') * 10 + (b - b'0')) as u32)
                }
                _ => err(ParseErrorKind::UnexpectedCharacter, at),
            }
        } else {
            self.pos += 1;
            Ok((self.s[at] - b'0') as u32)
        }
    }

    fn ring_bond(
        &mut self,
        cur: usize,
        num: u32,
        order: Option<BondOrder>,
        at: usize,
    ) -> Result<(), ParseError> {
        match self.rings.remove(&num) {
            None => {
                self.rings.insert(
                    num,
                    OpenRing {
                        atom: cur,
                        order,
                        offset: at,
                    },
                );
            }
            Some(open) => {
                if open.atom == cur {
                    return err(ParseErrorKind::InvalidRingBond, at);
                }
                let order = match (open.order, order) {
                    (Some(a), Some(b)) if a != b => {
                        return err(ParseErrorKind::InvalidRingBond, at)
                    }
                    (a, b) => a.or(b),
                };
                let dup = self.bonds.iter().any(|&(x, y, _)| {
                    (x == cur && y == open.atom) || (y == cur && x == open.atom)
                });
                if dup {
                    return err(ParseErrorKind::InvalidRingBond, at);
                }
                self.bonds.push((open.atom, cur, order));
            }
        }
        Ok(())
    }

    fn atom(&mut self) -> Result<usize, ParseError> {
        let at = self.pos;
        let c = self.s[at];
        let raw = if c == b'[' {
            self.bracket_atom()?
        } else if c.is_ascii_alphabetic() {
            let two = self.s.get(at..at + 2);
            let (element, aromatic, len) = match two {
                Some(b"Cl") => (Element::Cl, false, 2),
                Some(b"Br") => (Element::Br, false, 2),
                _ => match c {
                    b'B' => (Element::B, false, 1),
                    b'C' => (Element::C, false, 1),
                    b'N' => (Element::N, false, 1),
                    b'O' => (Element::O, false, 1),
                    b'P' => (Element::P, false, 1),
                    b'S' => (Element::S, false, 1),
                    b'F' => (Element::F, false, 1),
                    b'I' => (Element::I, false, 1),
                    b'b' => (Element::B, true, 1),
                    b'c' => (Element::C, true, 1),
                    b'n' => (Element::N, true, 1),
                    b'o' => (Element::O, true, 1),
                    b'p' => (Element::P, true, 1),
                    b's' => (Element::S, true, 1),
                    _ => return err(ParseErrorKind::UnknownElement, at),
                },
            };
            self.pos += len;
            RawAtom {
                atom: Atom {
                    element,
                    formal_charge: 0,
                    aromatic,
                    explicit_h: 0,
                },
                bracket: false,
                offset: at,
            }
        } else if c == b'*' {
            return err(ParseErrorKind::UnknownElement, at);
        } else {
            return err(ParseErrorKind::UnexpectedCharacter, at);
        };
        self.atoms.push(raw);
        Ok(self.atoms.len() - 1)
    }

    fn bracket_atom(&mut self) -> Result<RawAtom, ParseError> {
        let open = self.pos;
        self.pos += 1;
        if matches!(self.peek(), Some(b'0'..=b'9')) {
            return err(ParseErrorKind::Unsupported, self.pos);
        }
        let sym_at = self.pos;
        let mut end = sym_at;
        while end < self.s.len() && self.s[end].is_ascii_alphabetic() {
            end += 1;
        }
        if end == sym_at {
            return err(ParseErrorKind::UnexpectedCharacter, sym_at);
        }
        // Longest symbol match, leaving a trailing 'H' for the hydrogen count.
        let letters = &self.s[sym_at..end];
        let mut found = None;
        for len in (1..=letters.len().min(2)).rev() {
            let cand = std::str::from_utf8(&letters[..len]).expect("ascii");
            if let Some(e) = Element::from_symbol(cand) {
                found = Some((e, false, len));
                break;
            }
            let upper: String = cand
                .char_indices()
                .map(|(i, ch)| if i == 0 { ch.to_ascii_uppercase() } else { ch })
                .collect();
            if cand.as_bytes()[0].is_ascii_lowercase() {
                if let Some(e) = Element::from_symbol(&upper) {
                    if e.has_aromatic_form() {
                        found = Some((e, true, len));
                        break;
                    }
                }
            }
        }
        let Some((element, aromatic, len)) = found else {
            return err(ParseErrorKind::UnknownElement, sym_at);
        };
        self.pos = sym_at + len;
        let mut h = 0u8;
        if self.peek() == Some(b'H') {
            self.pos += 1;
            h = 1;
            if let Some(d @ b'0'..=b'9') = self.peek() {
                h = d - b'0';
                self.pos += 1;
            }
        }
        let mut charge: i32 = 0;
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            let unit = if sign == b'+' { 1 } else { -1 };
            self.pos += 1;
            charge = unit;
            if let Some(d @ b'0'..=b'9') = self.peek() {
                charge = unit * (d - b'0') as i32;
                self.pos += 1;
            } else {
                while self.peek() == Some(sign) {
                    charge += unit;
                    self.pos += 1;
                }
            }
        }
        match self.peek() {
            Some(b']') => self.pos += 1,
            Some(b'@') | Some(b':') => return err(ParseErrorKind::Unsupported, self.pos),
            Some(_) => return err(ParseErrorKind::UnexpectedCharacter, self.pos),
            None => return err(ParseErrorKind::UnexpectedCharacter, self.s.len()),
        }
        if charge.abs() > 7 {
            return err(ParseErrorKind::Unsupported, open);
        }
        Ok(RawAtom {
            atom: Atom {
                element,
                formal_charge: charge as i8,
                aromatic,
                explicit_h: h,
            },
            bracket: true,
            offset: open,
        })
    }

    fn finish(self) -> Result<MolecularGraph, ParseError> {
        let bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|&(i, j, order)| {
                let order = order.unwrap_or(
                    if self.atoms[i].atom.aromatic && self.atoms[j].atom.aromatic {
                        BondOrder::Aromatic
                    } else {
                        BondOrder::Single
                    },
                );
                Bond { i, j, order }
            })
            .collect();
        let atoms: Vec<Atom> = self.atoms.iter().map(|r| r.atom).collect();
        let mut g = match MolecularGraph::new(atoms, bonds) {
            Ok(g) => g,
            // Duplicate bonds can only arise from ring closures, which are
            // rejected earlier; keep the mapping total anyway.
            Err(_) => return err(ParseErrorKind::InvalidRingBond, 0),
        };

        let ring = g.ring_bonds();
        for (bi, b) in g.bonds().iter().enumerate() {
            if b.order == BondOrder::Aromatic && !ring[bi] {
                let j = b.i.max(b.j);
                return err(ParseErrorKind::AromaticOutsideRing, self.atoms[j].offset);
            }
        }
        let ring_atoms = g.ring_atoms();
        for (a, raw) in self.atoms.iter().enumerate() {
            if raw.atom.aromatic && !ring_atoms[a] {
                return err(ParseErrorKind::AromaticOutsideRing, raw.offset);
            }
        }

        for (a, raw) in self.atoms.iter().enumerate() {
            if !raw.bracket {
                let h = implicit_hydrogens(&g, a);
                g.atom_mut(a).explicit_h = h;
            }
        }
        if let Err(a) = check_valence(&g) {
            return err(ParseErrorKind::ValenceViolation, self.atoms[a].offset);
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kind(s: &str) -> ParseErrorKind {
        parse_smiles(s).unwrap_err().kind
    }

    #[test]
    fn single_carbon() {
        let g = parse_smiles("C").unwrap();
        assert_eq!(g.atom_count(), 1);
        assert!(g.bonds().is_empty());
        assert_eq!(g.atoms()[0].explicit_h, 4);
    }

    #[test]
    fn benzene_counts() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.atom_count(), 6);
        assert_eq!(g.bonds().len(), 6);
        assert!(g.atoms().iter().all(|a| a.aromatic));
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Aromatic));
    }

    #[test]
    fn unbalanced_branch_offset() {
        assert_eq!(
            parse_smiles("C1CC1C("),
            Err(ParseError {
                kind: ParseErrorKind::UnbalancedParenthesis,
                offset: 7
            })
        );
        assert_eq!(
            parse_smiles("CC)C"),
            Err(ParseError {
                kind: ParseErrorKind::UnbalancedParenthesis,
                offset: 2
            })
        );
    }

    #[test]
    fn typed_failures() {
        assert_eq!(kind("CXC"), ParseErrorKind::UnknownElement);
        assert_eq!(kind("[Xe]"), ParseErrorKind::UnknownElement);
        assert_eq!(kind("C1CC"), ParseErrorKind::UnclosedRing);
        assert_eq!(kind("C(C)(C)(C)(C)C"), ParseErrorKind::ValenceViolation);
        assert_eq!(kind("F/C=C/F"), ParseErrorKind::Unsupported);
        assert_eq!(kind("[13CH4]"), ParseErrorKind::Unsupported);
        assert_eq!(kind("[C@H](F)(Cl)Br"), ParseErrorKind::Unsupported);
        assert_eq!(kind("cc"), ParseErrorKind::AromaticOutsideRing);
        assert_eq!(kind("C11"), ParseErrorKind::InvalidRingBond);
        assert_eq!(kind(""), ParseErrorKind::EmptyInput);
        assert_eq!(kind("C=1CC-1"), ParseErrorKind::InvalidRingBond);
        assert_eq!(kind("C=="), ParseErrorKind::UnexpectedCharacter);
        assert_eq!(kind("()"), ParseErrorKind::UnexpectedCharacter);
    }

    #[test]
    fn unclosed_ring_reports_opening() {
        assert_eq!(
            parse_smiles("CC1CC"),
            Err(ParseError {
                kind: ParseErrorKind::UnclosedRing,
                offset: 2
            })
        );
    }

    #[test]
    fn percent_ring_closures_and_brackets() {
        let g = parse_smiles("C%12CCCC%12").unwrap();
        assert_eq!(g.bonds().len(), 5);
        let g = parse_smiles("[NH4+].[Cl-]").unwrap();
        assert_eq!(g.atoms()[0].explicit_h, 4);
        assert_eq!(g.atoms()[0].formal_charge, 1);
        assert_eq!(g.atoms()[1].formal_charge, -1);
        let g = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(g.atoms()[3].explicit_h, 1);
        let g = parse_smiles("[Si](C)(C)(C)C").unwrap();
        assert_eq!(g.atoms()[0].element, Element::Si);
        assert_eq!(g.atoms()[0].explicit_h, 0);
        let g = parse_smiles("[O--]").unwrap();
        assert_eq!(g.atoms()[0].formal_charge, -2);
    }

    #[test]
    fn ring_bond_symbol_on_either_side() {
        let a = parse_smiles("C=1CCCCC1").unwrap();
        let b = parse_smiles("C1CCCCC=1").unwrap();
        let count = |g: &MolecularGraph| {
            g.bonds()
                .iter()
                .filter(|b| b.order == BondOrder::Double)
                .count()
        };
        assert_eq!(count(&a), 1);
        assert_eq!(count(&b), 1);
    }
}

use crate::molgraph::{Bond, BondOrder, Element, MolecularGraph, EDGE_CATEGORIES};

use super::DiffusionError;

/// Node and edge category distributions of an `n`-node graph.
///
/// `edge_probs` is `n×n×k_edge`, symmetric in the first two indices, with the
/// diagonal and every pair touching a masked node fixed to category 0.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalGraphState {
    n: usize,
    k_node: usize,
    k_edge: usize,
    node_probs: Vec<f64>,
    edge_probs: Vec<f64>,
    node_mask: Vec<bool>,
}

fn one_hot_into(out: &mut [f64], c: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    out[c] = 1.0;
}

impl CategoricalGraphState {
    /// One-hot state from categories. `edge_cats` is `n×n`; only the upper
    /// triangle is read.
    pub fn one_hot(
        node_cats: &[usize],
        edge_cats: &[usize],
        node_mask: Vec<bool>,
        k_node: usize,
        k_edge: usize,
    ) -> Result<Self, DiffusionError> {
        let n = node_cats.len();
        if edge_cats.len() != n * n || node_mask.len() != n {
            return Err(DiffusionError::Shape(format!(
                "{} nodes, {} edge entries, {} mask entries",
                n,
                edge_cats.len(),
                node_mask.len()
            )));
        }
        if node_cats.iter().any(|&c| c >= k_node) || edge_cats.iter().any(|&c| c >= k_edge) {
            return Err(DiffusionError::Shape("category out of range".into()));
        }
        let mut s = CategoricalGraphState {
            n,
            k_node,
            k_edge,
            node_probs: vec![0.0; n * k_node],
            edge_probs: vec![0.0; n * n * k_edge],
            node_mask,
        };
        for (i, &c) in node_cats.iter().enumerate() {
            s.set_node(i, c);
        }
        for i in 0..n {
            s.set_edge(i, i, 0);
            for j in i + 1..n {
                s.set_edge(i, j, edge_cats[i * n + j]);
            }
        }
        Ok(s)
    }

    /// Molecular one-hot encoding with the 11-element and 5-bond vocabularies.
    pub fn from_graph(g: &MolecularGraph) -> Self {
        let n = g.atom_count();
        let nodes: Vec<usize> = g.atoms().iter().map(|a| a.element.index()).collect();
        let mut edges = vec![0; n * n];
        for b in g.bonds() {
            edges[b.i * n + b.j] = b.order.category();
            edges[b.j * n + b.i] = b.order.category();
        }
        Self::one_hot(&nodes, &edges, vec![true; n], Element::COUNT, EDGE_CATEGORIES)
            .expect("vocabulary indices are in range")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_node(&self) -> usize {
        self.k_node
    }

    pub fn k_edge(&self) -> usize {
        self.k_edge
    }

    pub fn node_mask(&self) -> &[bool] {
        &self.node_mask
    }

    pub fn node_probs(&self) -> &[f64] {
        &self.node_probs
    }

    pub fn edge_probs(&self) -> &[f64] {
        &self.edge_probs
    }

    pub fn node_row(&self, i: usize) -> &[f64] {
        &self.node_probs[i * self.k_node..(i + 1) * self.k_node]
    }

    pub fn edge_row(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * self.n + j) * self.k_edge;
        &self.edge_probs[at..at + self.k_edge]
    }

    pub(crate) fn set_node(&mut self, i: usize, c: usize) {
        let k = self.k_node;
        one_hot_into(&mut self.node_probs[i * k..(i + 1) * k], c);
    }

    /// Sets both `(i, j)` and `(j, i)`; pairs touching a masked node stay 0.
    pub(crate) fn set_edge(&mut self, i: usize, j: usize, c: usize) {
        let c = if i == j || !self.node_mask[i] || !self.node_mask[j] {
            0
        } else {
            c
        };
        let (n, k) = (self.n, self.k_edge);
        one_hot_into(&mut self.edge_probs[(i * n + j) * k..(i * n + j + 1) * k], c);
        one_hot_into(&mut self.edge_probs[(j * n + i) * k..(j * n + i + 1) * k], c);
    }

    pub(crate) fn set_node_probs(&mut self, i: usize, p: &[f64]) {
        let k = self.k_node;
        self.node_probs[i * k..(i + 1) * k].copy_from_slice(p);
    }

    pub(crate) fn set_edge_probs(&mut self, i: usize, j: usize, p: &[f64]) {
        let (n, k) = (self.n, self.k_edge);
        self.edge_probs[(i * n + j) * k..(i * n + j + 1) * k].copy_from_slice(p);
        self.edge_probs[(j * n + i) * k..(j * n + i + 1) * k].copy_from_slice(p);
    }

    /// Most probable category per node (first on ties).
    pub fn node_categories(&self) -> Vec<usize> {
        (0..self.n).map(|i| argmax(self.node_row(i))).collect()
    }

    /// Most probable category per ordered pair, `n×n`.
    pub fn edge_categories(&self) -> Vec<usize> {
        let mut out = vec![0; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                out[i * self.n + j] = argmax(self.edge_row(i, j));
            }
        }
        out
    }

    /// Checks the probability, symmetry and diagonal invariants.
    pub fn check(&self, tol: f64) -> Result<(), DiffusionError> {
        let row_ok = |r: &[f64]| {
            r.iter().all(|&v| v >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() <= tol
        };
        for i in 0..self.n {
            if self.node_mask[i] && !row_ok(self.node_row(i)) {
                return Err(DiffusionError::Invariant(format!("node row {i}")));
            }
            if self.edge_row(i, i)[0] != 1.0 {
                return Err(DiffusionError::Invariant(format!("diagonal {i}")));
            }
            for j in 0..self.n {
                if !row_ok(self.edge_row(i, j)) || self.edge_row(i, j) != self.edge_row(j, i) {
                    return Err(DiffusionError::Invariant(format!("edge ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// Decodes the argmax categories of the unmasked nodes into a molecule.
    /// The result may violate valence; validity is judged downstream.
    pub fn to_molecule(&self) -> Result<MolecularGraph, DiffusionError> {
        if self.k_node != Element::COUNT || self.k_edge != EDGE_CATEGORIES {
            return Err(DiffusionError::Shape("not a molecular vocabulary".into()));
        }
        let keep: Vec<usize> = (0..self.n).filter(|&i| self.node_mask[i]).collect();
        let nodes = self.node_categories();
        let edges = self.edge_categories();
        let elements: Vec<Element> = keep
            .iter()
            .map(|&i| Element::from_index(nodes[i]).expect("in range"))
            .collect();
        let mut bonds = Vec::new();
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate().skip(a + 1) {
                if let Some(order) = BondOrder::from_category(edges[i * self.n + j]) {
                    bonds.push(Bond { i: a, j: b, order });
                }
            }
        }
        MolecularGraph::from_skeleton(&elements, bonds)
            .map_err(|e| DiffusionError::Shape(e.to_string()))
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{is_isomorphic, parse_smiles};

    #[test]
    fn molecule_roundtrip() {
        for s in ["CCO", "c1ccccc1", "C#N", "FC(Cl)Br"] {
            let g = parse_smiles(s).unwrap();
            let st = CategoricalGraphState::from_graph(&g);
            st.check(1e-12).unwrap();
            assert!(is_isomorphic(&st.to_molecule().unwrap(), &g), "{s}");
        }
    }

    #[test]
    fn masked_nodes_have_no_edges() {
        let s = CategoricalGraphState::one_hot(&[1, 1], &[0, 1, 1, 0], vec![true, false], 2, 2)
            .unwrap();
        assert_eq!(s.edge_row(0, 1), &[1.0, 0.0]);
    }
}

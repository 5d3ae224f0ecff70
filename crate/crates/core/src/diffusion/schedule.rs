use serde::{Deserialize, Serialize};

use crate::molgraph::{Element, MolecularGraph, EDGE_CATEGORIES};

use super::DiffusionError;

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;

/// Square row-stochastic matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    k: usize,
    q: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(k: usize, q: Vec<f64>) -> Result<Self, DiffusionError> {
        if k == 0 || q.len() != k * k {
            return Err(DiffusionError::Shape(format!(
                "{} entries for a {k}x{k} matrix",
                q.len()
            )));
        }
        for row in q.chunks(k) {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-12 {
                return Err(DiffusionError::NotStochastic);
            }
        }
        Ok(TransitionMatrix { k, q })
    }

    pub fn identity(k: usize) -> Self {
        let mut q = vec![0.0; k * k];
        for i in 0..k {
            q[i * k + i] = 1.0;
        }
        TransitionMatrix { k, q }
    }

    /// `alpha·I + (1 − alpha)·𝟙·mᵀ` for a probability vector `m`.
    pub fn mixing(alpha: f64, m: &[f64]) -> Self {
        let k = m.len();
        let mut q = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                q[i * k + j] = (1.0 - alpha) * m[j] + if i == j { alpha } else { 0.0 };
            }
        }
        TransitionMatrix { k, q }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i * self.k..(i + 1) * self.k]
    }

    pub fn data(&self) -> &[f64] {
        &self.q
    }

    pub fn matmul(&self, other: &TransitionMatrix) -> TransitionMatrix {
        let k = self.k;
        let mut q = vec![0.0; k * k];
        for i in 0..k {
            for l in 0..k {
                let a = self.q[i * k + l];
                for j in 0..k {
                    q[i * k + j] += a * other.q[l * k + j];
                }
            }
        }
        TransitionMatrix { k, q }
    }

    /// Row vector times matrix.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (o, q) in out.iter_mut().zip(self.row(i)) {
                    *o += xi * q;
                }
            }
        }
        out
    }
}

/// Per-step matrices `Q_1..Q_T` and cumulative products `Q̄_0 = I .. Q̄_T`
/// for one channel (nodes or edges).
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionSchedule {
    steps: Vec<TransitionMatrix>,
    cumulative: Vec<TransitionMatrix>,
}

impl TransitionSchedule {
    pub fn from_matrices(steps: Vec<TransitionMatrix>) -> Result<Self, DiffusionError> {
        let k = steps.first().ok_or(DiffusionError::InvalidT(0))?.k();
        if steps.iter().any(|m| m.k() != k) {
            return Err(DiffusionError::Shape("mixed matrix sizes".into()));
        }
        let mut cumulative = vec![TransitionMatrix::identity(k)];
        for q in &steps {
            let next = cumulative.last().unwrap().matmul(q);
            cumulative.push(next);
        }
        Ok(TransitionSchedule { steps, cumulative })
    }

    pub fn k(&self) -> usize {
        self.steps[0].k()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `Q_t` for `1 ≤ t ≤ T`.
    pub fn q(&self, t: usize) -> &TransitionMatrix {
        &self.steps[t - 1]
    }

    /// `Q̄_t` for `0 ≤ t ≤ T`.
    pub fn q_bar(&self, t: usize) -> &TransitionMatrix {
        &self.cumulative[t]
    }
}

/// How the per-step matrices mix towards their limit distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    /// Limit is uniform over categories.
    #[default]
    Uniform,
    /// Limit is the training-set marginal of each channel.
    Marginal { nodes: Vec<f64>, edges: Vec<f64> },
}

impl TransitionKind {
    /// Laplace-smoothed node and edge-pair category frequencies of `graphs`.
    /// Every unordered atom pair counts once, so "no bond" dominates.
    pub fn marginal_from(graphs: &[MolecularGraph]) -> TransitionKind {
        let mut nodes = vec![1.0; Element::COUNT];
        let mut edges = vec![1.0; EDGE_CATEGORIES];
        for g in graphs {
            let n = g.atom_count();
            g.atoms().iter().for_each(|a| nodes[a.element.index()] += 1.0);
            let pairs = n * n.saturating_sub(1) / 2;
            edges[0] += (pairs - g.bonds().len()) as f64;
            g.bonds().iter().for_each(|b| edges[b.order.category()] += 1.0);
        }
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        };
        TransitionKind::Marginal {
            nodes: norm(nodes),
            edges: norm(edges),
        }
    }
}

/// Cumulative keep-probabilities `ᾱ_0 = 1 .. ᾱ_T` of the cosine schedule.
pub fn cosine_alpha_bar(steps: usize) -> Vec<f64> {
    let f = |t: usize| {
        let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    let f0 = f(0);
    (0..=steps).map(|t| (f(t) / f0).clamp(0.0, 1.0)).collect()
}

/// The complete noise schedule for both graph channels.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    kind: TransitionKind,
    pub nodes: TransitionSchedule,
    pub edges: TransitionSchedule,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.nodes.len()
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn kind(&self) -> &TransitionKind {
        &self.kind
    }

    /// Schedule from explicit matrices, used to build small oracles.
    pub fn from_matrices(
        nodes: Vec<TransitionMatrix>,
        edges: Vec<TransitionMatrix>,
    ) -> Result<Self, DiffusionError> {
        if nodes.len() != edges.len() {
            return Err(DiffusionError::Shape("node and edge step counts differ".into()));
        }
        let steps = nodes.len();
        Ok(NoiseSchedule {
            alpha_bar: vec![f64::NAN; steps + 1],
            kind: TransitionKind::Uniform,
            nodes: TransitionSchedule::from_matrices(nodes)?,
            edges: TransitionSchedule::from_matrices(edges)?,
        })
    }
}

/// Limit distributions of the node and edge channels.
fn limits(kind: &TransitionKind, k_node: usize, k_edge: usize) -> Result<(Vec<f64>, Vec<f64>), DiffusionError> {
    match kind {
        TransitionKind::Uniform => Ok((vec![1.0 / k_node as f64; k_node], vec![1.0 / k_edge as f64; k_edge])),
        TransitionKind::Marginal { nodes, edges } => {
            for m in [nodes, edges] {
                let s: f64 = m.iter().sum();
                if m.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                    return Err(DiffusionError::NotStochastic);
                }
            }
            if nodes.len() != k_node || edges.len() != k_edge {
                return Err(DiffusionError::Shape("marginal length".into()));
            }
            Ok((nodes.clone(), edges.clone()))
        }
    }
}

/// Mixing schedule whose cumulative keep-probabilities are `alpha_bar`.
fn from_alpha_bar(alpha_bar: Vec<f64>, kind: TransitionKind, k_node: usize, k_edge: usize) -> Result<NoiseSchedule, DiffusionError> {
    let (m_node, m_edge) = limits(&kind, k_node, k_edge)?;
    let alphas: Vec<f64> = alpha_bar
        .windows(2)
        .map(|w| if w[0] > 0.0 { (w[1] / w[0]).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    let nodes = alphas.iter().map(|&a| TransitionMatrix::mixing(a, &m_node)).collect();
    let edges = alphas.iter().map(|&a| TransitionMatrix::mixing(a, &m_edge)).collect();
    Ok(NoiseSchedule {
        alpha_bar,
        kind,
        nodes: TransitionSchedule::from_matrices(nodes)?,
        edges: TransitionSchedule::from_matrices(edges)?,
    })
}

/// Cosine schedule with mixing matrices `Q_t = α_t·I + (1 − α_t)·𝟙mᵀ`,
/// `α_t = ᾱ_t / ᾱ_{t−1}`.
pub fn build_schedule(
    steps: usize,
    kind: TransitionKind,
    k_node: usize,
    k_edge: usize,
) -> Result<NoiseSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::InvalidT(steps));
    }
    from_alpha_bar(cosine_alpha_bar(steps), kind, k_node, k_edge)
}

/// A coarser chain over `steps` evenly spaced original steps ending at `T`.
///
/// Mixing matrices sharing one limit compose by multiplying their keep
/// probabilities, so the coarse cumulative matrices equal the original ones
/// at the visited steps. Also returns, for coarse step `i` (1-based), the
/// original step it stands for at index `i − 1`.
pub fn strided_schedule(sched: &NoiseSchedule, steps: usize) -> Result<(NoiseSchedule, Vec<usize>), DiffusionError> {
    let t = sched.steps();
    if steps == 0 || steps > t {
        return Err(DiffusionError::InvalidT(steps));
    }
    if sched.alpha_bar.iter().any(|a| a.is_nan()) {
        return Err(DiffusionError::Shape("explicit-matrix schedules cannot be strided".into()));
    }
    let visited: Vec<usize> = (0..=steps).map(|i| i * t / steps).collect();
    let alpha_bar = visited.iter().map(|&v| sched.alpha_bar[v]).collect();
    let coarse = from_alpha_bar(alpha_bar, sched.kind.clone(), sched.nodes.k(), sched.edges.k())?;
    Ok((coarse, visited[1..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tv_to_uniform(m: &TransitionMatrix) -> f64 {
        let k = m.k();
        (0..k)
            .map(|i| 0.5 * m.row(i).iter().map(|v| (v - 1.0 / k as f64).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    #[test]
    fn stride_matches_cumulative_matrices() {
        let kind = TransitionKind::Marginal {
            nodes: vec![0.5, 0.3, 0.2],
            edges: vec![0.7, 0.3],
        };
        let full = build_schedule(50, kind, 3, 2).unwrap();
        let (coarse, map) = strided_schedule(&full, 7).unwrap();
        assert_eq!(map.len(), 7);
        assert_eq!(*map.last().unwrap(), 50);
        for (i, &t) in map.iter().enumerate() {
            for (a, b) in coarse.nodes.q_bar(i + 1).data().iter().zip(full.nodes.q_bar(t).data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let (same, ident) = strided_schedule(&full, 50).unwrap();
        assert_eq!(ident, (1..=50).collect::<Vec<_>>());
        assert_eq!(same.alpha_bar(), full.alpha_bar());
        assert!(strided_schedule(&full, 51).is_err());
    }

    #[test]
    fn single_step_reaches_uniform() {
        let s = build_schedule(1, TransitionKind::Uniform, 11, 5).unwrap();
        assert!(tv_to_uniform(s.nodes.q_bar(1)) < 1e-9);
        assert!(tv_to_uniform(s.edges.q_bar(1)) < 1e-9);
    }

    #[test]
    fn alpha_bar_is_monotone_and_final_is_uniform() {
        let s = build_schedule(500, TransitionKind::Uniform, 11, 5).unwrap();
        assert!(s.alpha_bar().windows(2).all(|w| w[1] <= w[0]));
        assert!(tv_to_uniform(s.nodes.q_bar(500)) < 1e-3);
    }

    #[test]
    fn cumulative_equals_explicit_product() {
        let s = build_schedule(20, TransitionKind::Uniform, 5, 5).unwrap();
        for t in [1, 7, 20] {
            let mut p = TransitionMatrix::identity(5);
            for u in 1..=t {
                p = p.matmul(s.nodes.q(u));
            }
            assert_eq!(&p, s.nodes.q_bar(t));
            // Uniform mixing has the closed form ᾱ_t I + (1 − ᾱ_t)/K.
            let a = s.alpha_bar()[t];
            assert!((p.get(0, 0) - (a + (1.0 - a) / 5.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            build_schedule(0, TransitionKind::Uniform, 3, 3),
            Err(DiffusionError::InvalidT(0))
        );
        assert!(TransitionMatrix::new(2, vec![0.5, 0.6, 0.0, 1.0]).is_err());
    }

    #[test]
    fn marginal_limit() {
        let kind = TransitionKind::Marginal {
            nodes: vec![0.7, 0.3],
            edges: vec![0.9, 0.1],
        };
        let s = build_schedule(50, kind, 2, 2).unwrap();
        let last = s.nodes.q_bar(50);
        assert!((last.get(1, 0) - 0.7).abs() < 1e-3);
    }
}

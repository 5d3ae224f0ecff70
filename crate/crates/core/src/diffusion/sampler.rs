use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::molgraph::{Element, MolecularGraph, EDGE_CATEGORIES};

use super::kernel::{reverse_step, sample_category, GraphLogits};
use super::schedule::{NoiseSchedule, TransitionSchedule};
use super::state::CategoricalGraphState;
use super::DiffusionError;

/// Anything that predicts clean-graph logits for a batch of noisy states.
/// `None` conditions request the unconditional (dropped-condition) branch.
pub trait GraphDenoiser {
    fn denoise_batch(
        &self,
        states: &[CategoricalGraphState],
        t: usize,
        conditions: &[Option<&[f64]>],
    ) -> Result<Vec<GraphLogits>, DiffusionError>;
}

/// Presents a denoiser trained on the full chain to a strided one: coarse
/// step `t` is forwarded as original step `map[t − 1]`.
pub struct Strided<'a, D: ?Sized> {
    pub inner: &'a D,
    pub map: Vec<usize>,
}

impl<D: GraphDenoiser + ?Sized> GraphDenoiser for Strided<'_, D> {
    fn denoise_batch(
        &self,
        states: &[CategoricalGraphState],
        t: usize,
        conditions: &[Option<&[f64]>],
    ) -> Result<Vec<GraphLogits>, DiffusionError> {
        let orig = *t
            .checked_sub(1)
            .and_then(|i| self.map.get(i))
            .ok_or(DiffusionError::StepOutOfRange { t, steps: self.map.len() })?;
        self.inner.denoise_batch(states, orig, conditions)
    }
}

/// One molecule to draw.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRequest {
    pub n_atoms: usize,
    pub condition: Option<Vec<f64>>,
    pub seed: u64,
}

/// Empirical distribution of molecule sizes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SizeHistogram {
    counts: BTreeMap<usize, u64>,
}

impl SizeHistogram {
    pub fn from_sizes(sizes: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = BTreeMap::new();
        for s in sizes.into_iter().filter(|&s| s > 0) {
            *counts.entry(s).or_insert(0) += 1;
        }
        SizeHistogram { counts }
    }

    pub fn from_counts(counts: BTreeMap<usize, u64>) -> Self {
        SizeHistogram { counts }
    }

    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.counts.keys().next_back().copied().unwrap_or(0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        let total: u64 = self.counts.values().sum();
        if total == 0 {
            return None;
        }
        let mut u = rng.gen_range(0..total);
        for (&s, &c) in &self.counts {
            if u < c {
                return Some(s);
            }
            u -= c;
        }
        None
    }
}

/// Limit distribution used to initialize `x_T`: the mean row of `Q̄_T`.
fn prior(ts: &TransitionSchedule) -> Vec<f64> {
    let q = ts.q_bar(ts.len());
    let k = ts.k();
    let mut p = vec![0.0; k];
    for i in 0..k {
        p.iter_mut().zip(q.row(i)).for_each(|(a, b)| *a += b / k as f64);
    }
    p
}

/// Draws `x_T` from the schedule's limit distribution.
pub fn sample_prior<R: Rng + ?Sized>(
    sched: &NoiseSchedule,
    n: usize,
    rng: &mut R,
) -> CategoricalGraphState {
    let (kn, ke) = (sched.nodes.k(), sched.edges.k());
    let (pn, pe) = (prior(&sched.nodes), prior(&sched.edges));
    let mut x = CategoricalGraphState::one_hot(&vec![0; n], &vec![0; n * n], vec![true; n], kn, ke)
        .expect("consistent shapes");
    for i in 0..n {
        x.set_node(i, sample_category(&pn, rng));
    }
    for i in 0..n {
        for j in i + 1..n {
            x.set_edge(i, j, sample_category(&pe, rng));
        }
    }
    x
}

/// Runs the reverse chain `T → 1` for every request. Each request owns a
/// generator seeded from its own seed, so results do not depend on how
/// requests are batched. Guidance applies to conditioned requests only;
/// at `s = 1` the unconditional pass is skipped since it cannot matter.
pub fn sample_states<D: GraphDenoiser + ?Sized>(
    sched: &NoiseSchedule,
    denoiser: &D,
    requests: &[SampleRequest],
    s: f64,
) -> Result<Vec<CategoricalGraphState>, DiffusionError> {
    if let Some(r) = requests.iter().find(|r| r.n_atoms == 0) {
        return Err(DiffusionError::Shape(format!("request for {} atoms", r.n_atoms)));
    }
    let mut rngs: Vec<ChaCha8Rng> = requests
        .iter()
        .map(|r| ChaCha8Rng::seed_from_u64(r.seed))
        .collect();
    let mut states: Vec<CategoricalGraphState> = requests
        .iter()
        .zip(&mut rngs)
        .map(|(r, rng)| sample_prior(sched, r.n_atoms, rng))
        .collect();
    let conds: Vec<Option<&[f64]>> = requests.iter().map(|r| r.condition.as_deref()).collect();
    let guided: Vec<usize> = (0..requests.len())
        .filter(|&i| conds[i].is_some() && s != 1.0)
        .collect();
    for t in (1..=sched.steps()).rev() {
        let cond_logits = denoiser.denoise_batch(&states, t, &conds)?;
        let uncond_logits = if guided.is_empty() {
            Vec::new()
        } else {
            let sub: Vec<CategoricalGraphState> = guided.iter().map(|&i| states[i].clone()).collect();
            denoiser.denoise_batch(&sub, t, &vec![None; sub.len()])?
        };
        let mut next = Vec::with_capacity(states.len());
        let mut g = 0;
        for (i, (x, rng)) in states.iter().zip(&mut rngs).enumerate() {
            let uncond = if guided.get(g) == Some(&i) {
                g += 1;
                Some(&uncond_logits[g - 1])
            } else {
                None
            };
            next.push(reverse_step(x, &cond_logits[i], uncond, t, sched, s, rng)?);
        }
        states = next;
    }
    Ok(states)
}

/// Samples molecules; each result may be chemically invalid.
pub fn sample_molecules<D: GraphDenoiser + ?Sized>(
    sched: &NoiseSchedule,
    denoiser: &D,
    requests: &[SampleRequest],
    s: f64,
) -> Result<Vec<MolecularGraph>, DiffusionError> {
    if sched.nodes.k() != Element::COUNT || sched.edges.k() != EDGE_CATEGORIES {
        return Err(DiffusionError::Shape("schedule is not molecular".into()));
    }
    sample_states(sched, denoiser, requests, s)?
        .iter()
        .map(CategoricalGraphState::to_molecule)
        .collect()
}

/// Single-molecule convenience wrapper.
pub fn sample<D: GraphDenoiser + ?Sized>(
    sched: &NoiseSchedule,
    denoiser: &D,
    condition: Option<&[f64]>,
    n_atoms: usize,
    s: f64,
    seed: u64,
) -> Result<MolecularGraph, DiffusionError> {
    let req = SampleRequest {
        n_atoms,
        condition: condition.map(<[f64]>::to_vec),
        seed,
    };
    Ok(sample_molecules(sched, denoiser, &[req], s)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::kernel::reverse_probs;
    use crate::diffusion::schedule::{build_schedule, TransitionKind, TransitionMatrix};
    use crate::molgraph::{parse_smiles, write_smiles};

    /// Always predicts a fixed molecule with certainty.
    struct Fixed(CategoricalGraphState);

    impl GraphDenoiser for Fixed {
        fn denoise_batch(
            &self,
            states: &[CategoricalGraphState],
            _t: usize,
            _c: &[Option<&[f64]>],
        ) -> Result<Vec<GraphLogits>, DiffusionError> {
            let logit = |p: &f64| if *p > 0.0 { 0.0 } else { -50.0 };
            Ok(states
                .iter()
                .map(|_| GraphLogits {
                    nodes: self.0.node_probs().iter().map(logit).collect(),
                    edges: self.0.edge_probs().iter().map(logit).collect(),
                })
                .collect())
        }
    }

    #[test]
    fn single_step_returns_the_predicted_molecule() {
        let g = parse_smiles("OC1CC1").unwrap();
        let sched = build_schedule(1, TransitionKind::Uniform, 11, 5).unwrap();
        let d = Fixed(CategoricalGraphState::from_graph(&g));
        let out = sample(&sched, &d, None, 4, 1.0, 5).unwrap();
        assert_eq!(write_smiles(&out), write_smiles(&g));
        let again = sample(&sched, &d, None, 4, 1.0, 5).unwrap();
        assert_eq!(out, again);
    }

    /// Logits that depend on the current state and step, for the toy chain.
    struct Toy;

    impl Toy {
        fn node_logits(x: &CategoricalGraphState, t: usize) -> [f64; 2] {
            let ones = x.node_categories().iter().sum::<usize>() as f64;
            [0.3 * t as f64, ones - 0.5]
        }
    }

    impl GraphDenoiser for Toy {
        fn denoise_batch(
            &self,
            states: &[CategoricalGraphState],
            t: usize,
            _c: &[Option<&[f64]>],
        ) -> Result<Vec<GraphLogits>, DiffusionError> {
            Ok(states
                .iter()
                .map(|x| {
                    let nl = Self::node_logits(x, t);
                    let edge = [0.2, x.node_categories()[0] as f64 - 0.4 * t as f64];
                    let mut edges = Vec::new();
                    for _ in 0..4 {
                        edges.extend(edge);
                    }
                    GraphLogits {
                        nodes: [nl, nl].concat(),
                        edges,
                    }
                })
                .collect())
        }
    }

    fn softmax2(l: [f64; 2]) -> [f64; 2] {
        let m = l[0].max(l[1]);
        let e = [(l[0] - m).exp(), (l[1] - m).exp()];
        [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])]
    }

    fn toy_state(code: usize) -> CategoricalGraphState {
        let (a, b, e) = (code & 1, (code >> 1) & 1, (code >> 2) & 1);
        CategoricalGraphState::one_hot(&[a, b], &[0, e, e, 0], vec![true; 2], 2, 2).unwrap()
    }

    fn code_of(x: &CategoricalGraphState) -> usize {
        let n = x.node_categories();
        n[0] | (n[1] << 1) | (x.edge_categories()[1] << 2)
    }

    #[test]
    fn toy_chain_matches_exact_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut stoch = || {
            let a: f64 = rng.gen_range(0.1..0.9);
            let b: f64 = rng.gen_range(0.1..0.9);
            TransitionMatrix::new(2, vec![a, 1.0 - a, b, 1.0 - b]).unwrap()
        };
        let sched = NoiseSchedule::from_matrices(
            vec![stoch(), stoch(), stoch()],
            vec![stoch(), stoch(), stoch()],
        )
        .unwrap();
        // Exact law by enumeration over the 8 toy states.
        let pn = prior(&sched.nodes);
        let pe = prior(&sched.edges);
        let mut law = [0.0; 8];
        for (c, l) in law.iter_mut().enumerate() {
            *l = pn[c & 1] * pn[(c >> 1) & 1] * pe[(c >> 2) & 1];
        }
        for t in (1..=3).rev() {
            let mut next = [0.0; 8];
            for (c, &w) in law.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let x = toy_state(c);
                let logits = &Toy.denoise_batch(std::slice::from_ref(&x), t, &[None]).unwrap()[0];
                let ph = softmax2(Toy::node_logits(&x, t));
                let pe_hat = softmax2([logits.edges[2], logits.edges[3]]);
                let p0 = reverse_probs(x.node_row(0), &ph, t, &sched.nodes).unwrap();
                let p1 = reverse_probs(x.node_row(1), &ph, t, &sched.nodes).unwrap();
                let p2 = reverse_probs(x.edge_row(0, 1), &pe_hat, t, &sched.edges).unwrap();
                for (d, nx) in next.iter_mut().enumerate() {
                    *nx += w * p0[d & 1] * p1[(d >> 1) & 1] * p2[(d >> 2) & 1];
                }
            }
            law = next;
        }
        let draws = 20_000;
        let reqs: Vec<SampleRequest> = (0..draws)
            .map(|i| SampleRequest {
                n_atoms: 2,
                condition: None,
                seed: i as u64,
            })
            .collect();
        let mut counts = [0usize; 8];
        for x in sample_states(&sched, &Toy, &reqs, 1.0).unwrap() {
            counts[code_of(&x)] += 1;
        }
        for c in 0..8 {
            let p = law[c];
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            let diff = (counts[c] as f64 - draws as f64 * p).abs();
            assert!(diff <= 3.0 * sigma + 1.0, "state {c}: {} vs {}", counts[c], p);
        }
    }

    #[test]
    fn histogram_sampling() {
        let h = SizeHistogram::from_sizes([3, 3, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws: Vec<usize> = (0..300).map(|_| h.sample(&mut rng).unwrap()).collect();
        assert!(draws.iter().all(|&d| d == 3 || d == 5));
        assert!(draws.iter().filter(|&&d| d == 3).count() > 150);
        assert_eq!(h.max_size(), 5);
    }
}

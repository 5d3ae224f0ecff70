use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamId, ParamSet, Tape, Tensor, Var};
use crate::diffusion::{CategoricalGraphState, DiffusionError, GraphDenoiser, GraphLogits};
use crate::molgraph::{Element, EDGE_CATEGORIES};
use crate::nn::{init_normal, Attention, FeedForward, Linear};

use super::DenoiserError;

const LN_EPS: f64 = 1e-5;
/// Closed-walk lengths used as ring indicators.
const WALKS: [usize; 4] = [3, 4, 5, 6];
/// Node inputs: the category one-hot, counts of incident bonds per
/// non-empty edge category, counts of bonded neighbours per element and
/// log closed-walk counts.
const NODE_FEATURES: usize = 2 * Element::COUNT + EDGE_CATEGORIES - 1 + WALKS.len();
/// Edge inputs: the category one-hot and log counts of walks of length 2
/// and 3 between the pair.
const EDGE_FEATURES: usize = EDGE_CATEGORIES + 2;

fn square_matmul(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i * m + k];
            if aik != 0.0 {
                for j in 0..m {
                    out[i * m + j] += aik * b[k * m + j];
                }
            }
        }
    }
    out
}
/// Largest batch pushed through one tape during inference.
const INFER_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Width of the pairwise edge features.
    pub d_edge: usize,
    pub ff_hidden: usize,
    /// Width of the incoming perturbation embedding.
    pub d_z: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            d_model: 128,
            blocks: 2,
            heads: 4,
            d_edge: 32,
            ff_hidden: 256,
            d_z: 128,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Block {
    modulation: Linear,
    attn: Attention,
    edge_bias: Linear,
    ff: FeedForward,
    pair: PairUpdate,
}

/// Symmetric pair features from node states and the current edge features:
/// `mlp(relu(a_i + a_j + u_i ⊙ u_j + e_ij))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct PairUpdate {
    proj: Linear,
    gate: Linear,
    mlp: Linear,
}

impl PairUpdate {
    fn new<R: Rng + ?Sized>(ps: &mut ParamSet, name: &str, d: usize, de: usize, rng: &mut R) -> Self {
        PairUpdate {
            proj: Linear::new(ps, &format!("{name}.proj"), d, de, true, rng),
            gate: Linear::new(ps, &format!("{name}.gate"), d, de, false, rng),
            mlp: Linear::new(ps, &format!("{name}.mlp"), de, de, true, rng),
        }
    }

    fn forward<'t>(&self, p: &Bound<'t>, h: Var<'t>, e: Var<'t>, n: usize) -> Result<Var<'t>, DenoiserError> {
        let a = self.proj.forward(p, h)?;
        let u = self.gate.forward(p, h)?;
        let pair = a
            .expand(2, n)?
            .add(a.expand(1, n)?)?
            .add(u.expand(2, n)?.mul(u.expand(1, n)?)?)?
            .add(e)?
            .relu();
        Ok(self.mlp.forward(p, pair)?)
    }
}

/// Graph transformer over noisy one-hot graphs. Edge features bias the
/// attention logits; the condition enters through AdaLN in every block.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    cfg: DenoiserConfig,
    params: ParamSet,
    node_in: Linear,
    edge_in: Linear,
    time1: Linear,
    time2: Linear,
    embedder: Linear,
    e_drop: ParamId,
    blocks: Vec<Block>,
    final_mod: Linear,
    node_head: Linear,
    final_pair: PairUpdate,
    edge_head: Linear,
}

/// Padded dense batch of states.
pub(crate) struct Batch {
    pub b: usize,
    pub n: usize,
    pub nodes: Tensor,
    pub edges: Tensor,
    /// `true` marks a padded or masked node.
    pub pad: Vec<bool>,
}

impl Batch {
    pub fn new(states: &[&CategoricalGraphState]) -> Result<Batch, DenoiserError> {
        let (kn, ke) = (Element::COUNT, EDGE_CATEGORIES);
        if let Some(s) = states.iter().find(|s| s.k_node() != kn || s.k_edge() != ke) {
            return Err(DenoiserError::Shape(format!(
                "state vocabulary {}x{}",
                s.k_node(),
                s.k_edge()
            )));
        }
        let b = states.len();
        let n = states.iter().map(|s| s.n()).max().unwrap_or(0);
        if b == 0 || n == 0 {
            return Err(DenoiserError::Shape("empty batch".into()));
        }
        let (nf, ef) = (NODE_FEATURES, EDGE_FEATURES);
        let mut nodes = vec![0.0; b * n * nf];
        let mut edges = vec![0.0; b * n * n * ef];
        let mut pad = vec![true; b * n];
        for (bi, s) in states.iter().enumerate() {
            let m = s.n();
            let live = |i: usize| s.node_mask()[i];
            // Probability that i and j are bonded at all.
            let mut adj = vec![0.0; m * m];
            for i in (0..m).filter(|&i| live(i)) {
                for j in (0..m).filter(|&j| j != i && live(j)) {
                    adj[i * m + j] = 1.0 - s.edge_row(i, j)[0];
                }
            }
            let mut powers = vec![adj.clone()];
            for _ in 1..*WALKS.last().expect("non-empty") {
                let next = square_matmul(powers.last().expect("non-empty"), &adj, m);
                powers.push(next);
            }
            for i in (0..m).filter(|&i| live(i)) {
                pad[bi * n + i] = false;
                let o = (bi * n + i) * nf;
                nodes[o..o + kn].copy_from_slice(s.node_row(i));
                for (w, &len) in WALKS.iter().enumerate() {
                    nodes[o + nf - WALKS.len() + w] = powers[len - 1][i * m + i].ln_1p();
                }
                for j in (0..m).filter(|&j| live(j)) {
                    let row = s.edge_row(i, j);
                    let oe = ((bi * n + i) * n + j) * ef;
                    edges[oe..oe + ke].copy_from_slice(row);
                    if j == i {
                        continue;
                    }
                    for k in 1..ke {
                        nodes[o + kn + k - 1] += row[k];
                    }
                    let a = adj[i * m + j];
                    for (k, v) in s.node_row(j).iter().enumerate() {
                        nodes[o + kn + ke - 1 + k] += a * v;
                    }
                    edges[oe + ke] = powers[1][i * m + j].ln_1p();
                    edges[oe + ke + 1] = powers[2][i * m + j].ln_1p();
                }
            }
        }
        Ok(Batch {
            b,
            n,
            nodes: Tensor::new(vec![b, n, nf], nodes)?,
            edges: Tensor::new(vec![b, n, n, ef], edges)?,
            pad,
        })
    }
}

/// Sinusoidal features of the integer step, `[B, d]`.
fn time_features(times: &[usize], d: usize) -> Tensor {
    let half = d / 2;
    let mut data = Vec::with_capacity(times.len() * d);
    for &t in times {
        let mut row = vec![0.0; d];
        for k in 0..half {
            let w = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
            row[k] = (t as f64 * w).sin();
            row[half + k] = (t as f64 * w).cos();
        }
        data.extend(row);
    }
    Tensor::new(vec![times.len(), d], data).expect("shape matches")
}

/// `layernorm(x)·(1 + γ) + β` with `γ`, `β` of shape `[B, d]` broadcast over nodes.
fn adaln<'t>(x: Var<'t>, gamma: Var<'t>, beta: Var<'t>, n: usize) -> Result<Var<'t>, DenoiserError> {
    let g = gamma.add_scalar(1.0).expand(1, n)?;
    let b = beta.expand(1, n)?;
    Ok(x.layernorm(LN_EPS)?.mul(g)?.add(b)?)
}

impl DenoiserModel {
    pub fn new<R: Rng + ?Sized>(cfg: DenoiserConfig, rng: &mut R) -> Self {
        let mut ps = ParamSet::new();
        let (d, de) = (cfg.d_model, cfg.d_edge);
        let node_in = Linear::new(&mut ps, "den.node_in", NODE_FEATURES, d, true, rng);
        let edge_in = Linear::new(&mut ps, "den.edge_in", EDGE_FEATURES, de, true, rng);
        let time1 = Linear::new(&mut ps, "den.time1", d, d, true, rng);
        let time2 = Linear::new(&mut ps, "den.time2", d, d, true, rng);
        let embedder = Linear::new(&mut ps, "den.embedder", cfg.d_z, d, true, rng);
        let e_drop = ps.add("den.e_drop", init_normal(&[d], d, rng));
        let blocks = (0..cfg.blocks)
            .map(|l| Block {
                modulation: Linear::zeros(&mut ps, &format!("den.block{l}.mod"), d, 4 * d, true),
                attn: Attention::new(&mut ps, &format!("den.block{l}.attn"), d, cfg.heads, false, rng),
                edge_bias: Linear::new(&mut ps, &format!("den.block{l}.edge_bias"), de, cfg.heads, true, rng),
                ff: FeedForward::new(&mut ps, &format!("den.block{l}.ff"), d, cfg.ff_hidden, false, rng),
                pair: PairUpdate::new(&mut ps, &format!("den.block{l}.pair"), d, de, rng),
            })
            .collect();
        let final_mod = Linear::zeros(&mut ps, "den.final_mod", d, 2 * d, true);
        let node_head = Linear::zeros(&mut ps, "den.node_head", d, Element::COUNT, true);
        let final_pair = PairUpdate::new(&mut ps, "den.final_pair", d, de, rng);
        let edge_head = Linear::zeros(&mut ps, "den.edge_head", de, EDGE_CATEGORIES, true);
        DenoiserModel {
            cfg,
            params: ps,
            node_in,
            edge_in,
            time1,
            time2,
            embedder,
            e_drop,
            blocks,
            final_mod,
            node_head,
            final_pair,
            edge_head,
        }
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn embedder(&self) -> &Linear {
        &self.embedder
    }

    pub fn e_drop(&self) -> ParamId {
        self.e_drop
    }

    /// Condition rows `[B, d]`: `E(z)` for conditioned items, `e_drop` otherwise.
    pub fn conditions<'t>(
        &self,
        p: &Bound<'t>,
        conds: &[Option<&[f64]>],
    ) -> Result<Var<'t>, DenoiserError> {
        let tape = p.var(self.e_drop).tape();
        let d = self.cfg.d_model;
        let mut z = Vec::with_capacity(conds.len() * self.cfg.d_z);
        let mut keep = Vec::with_capacity(conds.len() * d);
        for c in conds {
            match c {
                Some(v) if v.len() == self.cfg.d_z => {
                    z.extend_from_slice(v);
                    keep.extend(std::iter::repeat_n(1.0, d));
                }
                Some(v) => {
                    return Err(DenoiserError::Shape(format!(
                        "condition of width {}, expected {}",
                        v.len(),
                        self.cfg.d_z
                    )))
                }
                None => {
                    z.extend(std::iter::repeat_n(0.0, self.cfg.d_z));
                    keep.extend(std::iter::repeat_n(0.0, d));
                }
            }
        }
        let b = conds.len();
        let drop: Vec<f64> = keep.iter().map(|k| 1.0 - k).collect();
        let zv = tape.constant(Tensor::new(vec![b, self.cfg.d_z], z)?);
        let emb = self.embedder.forward(p, zv)?;
        let keep = tape.constant(Tensor::new(vec![b, d], keep)?);
        let drop = tape.constant(Tensor::new(vec![b, d], drop)?);
        Ok(emb
            .mul(keep)?
            .add(p.var(self.e_drop).expand(0, b)?.mul(drop)?)?)
    }

    /// Node logits `[B, N, K_a]` and edge logits `[B, N, N, K_b]`.
    pub(crate) fn forward<'t>(
        &self,
        p: &Bound<'t>,
        batch: &Batch,
        times: &[usize],
        cond: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>), DenoiserError> {
        let (b, n, d) = (batch.b, batch.n, self.cfg.d_model);
        if times.len() != b || cond.shape() != [b, d] {
            return Err(DenoiserError::Shape(format!(
                "{} steps and condition {:?} for batch of {b}",
                times.len(),
                cond.shape()
            )));
        }
        let tape = cond.tape();
        let mut h = self.node_in.forward(p, tape.constant(batch.nodes.clone()))?;
        let mut e = self.edge_in.forward(p, tape.constant(batch.edges.clone()))?;
        let tf = tape.constant(time_features(times, d));
        let temb = self.time2.forward(p, self.time1.forward(p, tf)?.relu())?;
        let c = temb.add(cond)?.relu();
        h = h.add(c.expand(1, n)?)?;
        for blk in &self.blocks {
            let m = blk.modulation.forward(p, c)?;
            let part = |k: usize| m.slice(1, k * d, (k + 1) * d);
            let x = adaln(h, part(0)?, part(1)?, n)?;
            let bias = blk.edge_bias.forward(p, e)?.permute(&[0, 3, 1, 2])?;
            h = h.add(blk.attn.forward(p, x, x, Some(bias), Some(&batch.pad))?)?;
            let x = adaln(h, part(2)?, part(3)?, n)?;
            h = h.add(blk.ff.forward(p, x)?)?;
            e = e.add(blk.pair.forward(p, h.layernorm(LN_EPS)?, e, n)?)?;
        }
        let m = self.final_mod.forward(p, c)?;
        let hf = adaln(h, m.slice(1, 0, d)?, m.slice(1, d, 2 * d)?, n)?;
        let nodes = self.node_head.forward(p, hf)?;
        let pair = self.final_pair.forward(p, hf, e, n)?.relu();
        let edges = self.edge_head.forward(p, pair)?;
        Ok((nodes, edges))
    }

    /// Inference-only logits for one noisy state.
    pub fn denoise(
        &self,
        state: &CategoricalGraphState,
        t: usize,
        z: Option<&[f64]>,
    ) -> Result<GraphLogits, DenoiserError> {
        Ok(self.logits(&[state], t, &[z])?.remove(0))
    }

    fn logits(
        &self,
        states: &[&CategoricalGraphState],
        t: usize,
        conds: &[Option<&[f64]>],
    ) -> Result<Vec<GraphLogits>, DenoiserError> {
        if states.len() != conds.len() {
            return Err(DenoiserError::Shape("one condition per state".into()));
        }
        let (kn, ke) = (Element::COUNT, EDGE_CATEGORIES);
        let mut out = Vec::with_capacity(states.len());
        for (chunk, cchunk) in states.chunks(INFER_CHUNK).zip(conds.chunks(INFER_CHUNK)) {
            let batch = Batch::new(chunk)?;
            let tape = Tape::no_grad();
            let p = self.params.bind(&tape)?;
            let c = self.conditions(&p, cchunk)?;
            let (nl, el) = self.forward(&p, &batch, &vec![t; chunk.len()], c)?;
            let (nl, el) = (nl.to_tensor(), el.to_tensor());
            let n = batch.n;
            for (bi, s) in chunk.iter().enumerate() {
                let m = s.n();
                let mut nodes = Vec::with_capacity(m * kn);
                let mut edges = Vec::with_capacity(m * m * ke);
                for i in 0..m {
                    let o = (bi * n + i) * kn;
                    nodes.extend_from_slice(&nl.data()[o..o + kn]);
                }
                for i in 0..m {
                    for j in 0..m {
                        // Average the two orientations so the output is
                        // symmetric to the last bit.
                        let o1 = ((bi * n + i) * n + j) * ke;
                        let o2 = ((bi * n + j) * n + i) * ke;
                        for k in 0..ke {
                            edges.push(0.5 * (el.data()[o1 + k] + el.data()[o2 + k]));
                        }
                    }
                }
                out.push(GraphLogits { nodes, edges });
            }
        }
        Ok(out)
    }
}

impl GraphDenoiser for DenoiserModel {
    fn denoise_batch(
        &self,
        states: &[CategoricalGraphState],
        t: usize,
        conditions: &[Option<&[f64]>],
    ) -> Result<Vec<GraphLogits>, DiffusionError> {
        let refs: Vec<&CategoricalGraphState> = states.iter().collect();
        self.logits(&refs, t, conditions)
            .map_err(|e| DiffusionError::Model(e.to_string()))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_config() -> DenoiserConfig {
        DenoiserConfig {
            d_model: 16,
            blocks: 2,
            heads: 2,
            d_edge: 8,
            ff_hidden: 24,
            d_z: 6,
        }
    }

    /// Gives every parameter, including the zero-initialized ones, random values.
    pub(crate) fn randomize(m: &mut DenoiserModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..m.params.len() {
            let t = m.params.get_mut(ParamId(i));
            for v in t.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }

    fn state(smiles: &str) -> CategoricalGraphState {
        CategoricalGraphState::from_graph(&parse_smiles(smiles).unwrap())
    }

    #[test]
    fn zero_heads_give_uniform_logits() {
        let m = DenoiserModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(0));
        let l = m.denoise(&state("CCO"), 3, Some(&[0.3; 6])).unwrap();
        assert!(l.nodes.iter().chain(&l.edges).all(|&v| v == 0.0));
    }

    #[test]
    fn node_permutation_equivariance() {
        let mut m = DenoiserModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(1));
        randomize(&mut m, 2);
        let g = parse_smiles("OC(=O)c1ccncc1").unwrap();
        let n = g.atom_count();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let mut perm: Vec<usize> = (0..n).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            let gp = g.permuted(&perm);
            let a = m.denoise(&CategoricalGraphState::from_graph(&g), 4, Some(&[0.1; 6])).unwrap();
            let b = m.denoise(&CategoricalGraphState::from_graph(&gp), 4, Some(&[0.1; 6])).unwrap();
            let (kn, ke) = (Element::COUNT, EDGE_CATEGORIES);
            // Atom i of g is atom perm[i] of gp.
            for i in 0..n {
                for k in 0..kn {
                    let (u, v) = (a.nodes[i * kn + k], b.nodes[perm[i] * kn + k]);
                    assert!((u - v).abs() < 1e-9, "node {i}");
                }
                for j in 0..n {
                    for k in 0..ke {
                        let u = a.edges[(i * n + j) * ke + k];
                        let v = b.edges[(perm[i] * n + perm[j]) * ke + k];
                        assert!((u - v).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn edge_logits_are_symmetric_and_condition_matters() {
        let mut m = DenoiserModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(4));
        randomize(&mut m, 5);
        let x = state("C1CC1N");
        let a = m.denoise(&x, 2, Some(&[0.5, -0.2, 0.1, 0.0, 0.3, 0.9])).unwrap();
        let b = m.denoise(&x, 2, Some(&[-0.5, 0.2, 0.7, 0.0, -0.3, 0.1])).unwrap();
        let c = m.denoise(&x, 2, None).unwrap();
        let (n, ke) = (4, EDGE_CATEGORIES);
        for i in 0..n {
            for j in 0..n {
                for k in 0..ke {
                    assert_eq!(a.edges[(i * n + j) * ke + k], a.edges[(j * n + i) * ke + k]);
                }
            }
        }
        assert_ne!(a.nodes, b.nodes);
        assert_ne!(a.nodes, c.nodes);
    }

    #[test]
    fn padding_does_not_change_results() {
        let mut m = DenoiserModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(6));
        randomize(&mut m, 7);
        let (x, y) = (state("CCO"), state("c1ccccc1N"));
        let z: &[f64] = &[0.2; 6];
        let alone = m.denoise(&x, 5, Some(z)).unwrap();
        let both = m.logits(&[&y, &x], 5, &[None, Some(z)]).unwrap();
        for (u, v) in alone.nodes.iter().zip(&both[1].nodes) {
            assert!((u - v).abs() < 1e-10);
        }
        for (u, v) in alone.edges.iter().zip(&both[1].edges) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}

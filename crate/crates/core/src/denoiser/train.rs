use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Bound, Tape, Tensor, Var};
use crate::diffusion::{forward_sample, CategoricalGraphState, NoiseSchedule};
use crate::molgraph::MolecularGraph;
use crate::tfe::{condition_dropout, Provenance};

use super::model::{Batch, DenoiserModel};
use super::DenoiserError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Condition dropout probability.
    pub p_uncond: f64,
    /// Scale of the Gaussian noise added to every condition row.
    pub noise_sigma: f64,
    /// Anneal the learning rate to zero along a half cosine.
    pub cosine_decay: bool,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        DenoiserTrainConfig {
            steps: 2000,
            batch: 32,
            lr: 2e-4,
            p_uncond: 0.1,
            noise_sigma: 0.1,
            cosine_decay: false,
        }
    }
}

/// A clean molecule paired with the perturbation embedding that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub x0: CategoricalGraphState,
    pub z: Vec<f64>,
}

impl TrainItem {
    pub fn new(g: &MolecularGraph, z: Vec<f64>) -> Self {
        TrainItem {
            x0: CategoricalGraphState::from_graph(g),
            z,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub node: f64,
    pub edge: f64,
}

/// Cross-entropy of the clean categories under the predicted logits:
/// mean over real nodes plus mean over real node pairs `i < j`.
pub(crate) fn denoising_loss<'t>(
    model: &DenoiserModel,
    p: &Bound<'t>,
    x0: &[&CategoricalGraphState],
    noisy: &[&CategoricalGraphState],
    times: &[usize],
    cond: Var<'t>,
) -> Result<(Var<'t>, Var<'t>, Var<'t>), DenoiserError> {
    let batch = Batch::new(noisy)?;
    let (nl, el) = model.forward(p, &batch, times, cond)?;
    let n = batch.n;
    let mut node_t = vec![0; batch.b * n];
    let mut node_w = vec![0.0; batch.b * n];
    let mut edge_t = vec![0; batch.b * n * n];
    let mut edge_w = vec![0.0; batch.b * n * n];
    for (bi, x) in x0.iter().enumerate() {
        if x.n() != noisy[bi].n() {
            return Err(DenoiserError::Shape("clean and noisy sizes differ".into()));
        }
        let (nc, ec, m) = (x.node_categories(), x.edge_categories(), x.n());
        for i in 0..m {
            if !x.node_mask()[i] {
                continue;
            }
            node_t[bi * n + i] = nc[i];
            node_w[bi * n + i] = 1.0;
            for j in i + 1..m {
                if x.node_mask()[j] {
                    edge_t[(bi * n + i) * n + j] = ec[i * m + j];
                    edge_w[(bi * n + i) * n + j] = 1.0;
                }
            }
        }
    }
    let tape = cond.tape();
    let node = nl.cross_entropy(&node_t, Some(&node_w))?;
    let edge = if edge_w.iter().any(|&w| w > 0.0) {
        el.cross_entropy(&edge_t, Some(&edge_w))?
    } else {
        tape.constant(Tensor::scalar(0.0))
    };
    Ok((node.add(edge)?, node, edge))
}

/// One optimizer step: per item draw `t ~ U{1..T}`, noise the graph, drop or
/// perturb the condition, then descend on the denoising cross-entropy.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut DenoiserModel,
    opt: &mut Adam,
    batch: &[&TrainItem],
    sched: &NoiseSchedule,
    cfg: &DenoiserTrainConfig,
    rng: &mut R,
) -> Result<StepLoss, DenoiserError> {
    if batch.is_empty() {
        return Err(DenoiserError::Shape("empty batch".into()));
    }
    let d_z = model.config().d_z;
    if let Some(it) = batch.iter().find(|it| it.z.len() != d_z) {
        return Err(DenoiserError::Shape(format!("embedding of width {}", it.z.len())));
    }
    let steps = sched.steps();
    let mut times = Vec::with_capacity(batch.len());
    let mut noisy = Vec::with_capacity(batch.len());
    for it in batch {
        let t = rng.gen_range(1..=steps);
        noisy.push(forward_sample(&it.x0, t, sched, rng)?);
        times.push(t);
    }
    let tape = Tape::new();
    let p = model.params().bind(&tape)?;
    let z: Vec<f64> = batch.iter().flat_map(|it| it.z.iter().copied()).collect();
    let zv = tape.constant(Tensor::new(vec![batch.len(), d_z], z)?);
    let (c, _): (Var, Vec<Provenance>) = condition_dropout(
        &p,
        model.embedder(),
        zv,
        p.var(model.e_drop()),
        cfg.p_uncond,
        cfg.noise_sigma,
        rng,
    )?;
    let x0: Vec<&CategoricalGraphState> = batch.iter().map(|it| &it.x0).collect();
    let noisy_refs: Vec<&CategoricalGraphState> = noisy.iter().collect();
    let (total, node, edge) = denoising_loss(model, &p, &x0, &noisy_refs, &times, c)?;
    let loss = StepLoss {
        total: total.item(),
        node: node.item(),
        edge: edge.item(),
    };
    if !loss.total.is_finite() {
        return Err(DenoiserError::NonFiniteLoss {
            step: opt.steps_taken(),
            node: loss.node,
            edge: loss.edge,
        });
    }
    let grads = tape.backward(total)?;
    let g = p.grads(&grads);
    drop(p);
    opt.step(model.params_mut(), &g)?;
    Ok(loss)
}

/// Runs `cfg.steps` steps over shuffled epochs of `items` (a batch larger
/// than the data set spans several epochs), calling
/// `on_step(step, loss)` after each.
pub fn train_denoiser(
    model: &mut DenoiserModel,
    items: &[TrainItem],
    sched: &NoiseSchedule,
    cfg: &DenoiserTrainConfig,
    seed: u64,
    mut on_step: impl FnMut(usize, &StepLoss),
) -> Result<Vec<StepLoss>, DenoiserError> {
    if items.is_empty() || cfg.batch == 0 {
        return Err(DenoiserError::Shape("no training items".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut cursor = order.len();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if cfg.cosine_decay {
            let frac = step as f64 / cfg.steps as f64;
            opt.lr = 0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * frac).cos());
        }
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&items[order[cursor]]);
            cursor += 1;
        }
        let loss = train_step(model, &mut opt, &batch, sched, cfg, &mut rng)?;
        on_step(step, &loss);
        trace.push(loss);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, ParamId};
    use crate::denoiser::model::tests::{randomize, small_config};
    use crate::diffusion::{build_schedule, TransitionKind};
    use crate::molgraph::{parse_smiles, Element, EDGE_CATEGORIES};

    fn sched(t: usize) -> NoiseSchedule {
        build_schedule(t, TransitionKind::Uniform, Element::COUNT, EDGE_CATEGORIES).unwrap()
    }

    fn items(n: usize) -> Vec<TrainItem> {
        ["CCO", "c1ccccc1", "CC(=O)O", "C#N", "OCCN", "c1ccncc1", "CCCl", "C=CC=C", "CS(=O)C", "FC(F)F"]
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, s)| {
                let z = (0..6).map(|k| ((i * 7 + k) as f64).sin()).collect();
                TrainItem::new(&parse_smiles(s).unwrap(), z)
            })
            .collect()
    }

    #[test]
    fn initial_losses_are_uniform() {
        let mut m = DenoiserModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(0));
        let data = items(10);
        let batch: Vec<&TrainItem> = data.iter().collect();
        let mut opt = Adam::new(2e-4);
        let cfg = DenoiserTrainConfig::default();
        let l = train_step(&mut m, &mut opt, &batch, &sched(20), &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert!((l.node - 11f64.ln()).abs() < 1e-12, "{l:?}");
        assert!((l.edge - 5f64.ln()).abs() < 1e-12, "{l:?}");
    }

    #[test]
    fn deterministic_trajectory() {
        let data = items(6);
        let cfg = DenoiserTrainConfig {
            steps: 5,
            batch: 4,
            lr: 1e-3,
            ..Default::default()
        };
        let run = || {
            let mut m = DenoiserModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(3));
            train_denoiser(&mut m, &data, &sched(10), &cfg, 9, |_, _| {}).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
    }

    #[test]
    fn full_dropout_severs_the_condition() {
        let data = items(5);
        let other: Vec<TrainItem> = data
            .iter()
            .map(|it| TrainItem {
                x0: it.x0.clone(),
                z: it.z.iter().map(|v| -3.0 * v + 1.0).collect(),
            })
            .collect();
        let cfg = DenoiserTrainConfig {
            steps: 4,
            batch: 5,
            lr: 1e-3,
            p_uncond: 1.0,
            ..Default::default()
        };
        let run = |d: &[TrainItem]| {
            let mut m = DenoiserModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(5));
            randomize(&mut m, 6);
            train_denoiser(&mut m, d, &sched(10), &cfg, 11, |_, _| {}).unwrap()
        };
        assert_eq!(run(&data), run(&other));
    }

    #[test]
    fn loss_gradient_on_three_atoms() {
        let mut m = DenoiserModel::new(small_config(), &mut ChaCha8Rng::seed_from_u64(7));
        randomize(&mut m, 8);
        let item = TrainItem::new(&parse_smiles("C=CO").unwrap(), vec![0.3, -0.1, 0.2, 0.5, 0.0, -0.4]);
        let noisy = forward_sample(&item.x0, 3, &sched(10), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let names = [
            "den.node_in.w",
            "den.edge_in.w",
            "den.embedder.w",
            "den.block0.mod.w",
            "den.block1.attn.wq",
            "den.block0.edge_bias.w",
            "den.final_mod.b",
            "den.edge_head.w",
        ];
        for name in names {
            let id: ParamId = m.params().find(name).unwrap();
            let point = m.params().get(id).clone();
            let r = grad_check(
                |v| {
                    let mut p = m.params().bind(v.tape())?;
                    p.replace(id, v);
                    let c = m
                        .conditions(&p, &[Some(&item.z)])
                        .map_err(|e| crate::autodiff::AdError::InvalidArgument(e.to_string()))?;
                    let (total, _, _) = denoising_loss(&m, &p, &[&item.x0], &[&noisy], &[3], c)
                        .map_err(|e| crate::autodiff::AdError::InvalidArgument(e.to_string()))?;
                    Ok(total)
                },
                &point,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(r.passed, "{name}: {r:?}");
        }
    }
}

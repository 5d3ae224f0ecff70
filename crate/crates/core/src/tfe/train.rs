use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Adam, Tape, Tensor};

use super::losses::{global_loss, local_loss, total_loss, LossWeights};
use super::model::TfeModel;
use super::{ExpressionProfile, TfeError};

/// One training pair: the perturbation signature and its target molecule.
#[derive(Clone, Debug, PartialEq)]
pub struct TfeExample {
    pub pre: ExpressionProfile,
    pub post: ExpressionProfile,
    /// Count fingerprint of the target molecule.
    pub fingerprint: Vec<f64>,
    /// Canonical SMILES of the target, the contrastive label.
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TfeTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weights: LossWeights,
}

impl Default for TfeTrainConfig {
    fn default() -> Self {
        TfeTrainConfig {
            steps: 200,
            batch: 32,
            lr: 2e-4,
            weights: LossWeights::default(),
        }
    }
}

/// Per-step loss values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TfeTrace {
    pub total: Vec<f64>,
    pub global: Vec<f64>,
    pub local: Vec<f64>,
}

/// Trains all TFE parameters (encoder, heads and VAE stub) jointly on
/// `L_global + γ·L_local` with Adam.
pub fn train_tfe(
    model: &mut TfeModel,
    examples: &[TfeExample],
    cfg: &TfeTrainConfig,
    seed: u64,
) -> Result<TfeTrace, TfeError> {
    if examples.is_empty() || cfg.batch == 0 {
        return Err(TfeError::InvalidArgument("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(cfg.lr);
    let mut trace = TfeTrace::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let latent = model.vae().latent;
    let bits = model.config().fp_bits;
    for _ in 0..cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch);
        while idx.len() < cfg.batch.min(examples.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let batch: Vec<&TfeExample> = idx.iter().map(|&i| &examples[i]).collect();
        let b = batch.len();
        let counts: Vec<f64> = batch.iter().flat_map(|e| e.fingerprint.iter().copied()).collect();
        if counts.len() != b * bits {
            return Err(TfeError::Shape(format!("fingerprints must have {bits} entries")));
        }
        let labels: Vec<String> = batch.iter().map(|e| e.label.clone()).collect();
        let eps: Vec<f64> = (0..b * latent).map(|_| StandardNormal.sample(&mut rng)).collect();

        let tape = Tape::new();
        let p = model.params().bind(&tape)?;
        let pre = tape.constant(TfeModel::stack(&batch.iter().map(|e| &e.pre).collect::<Vec<_>>())?);
        let post = tape.constant(TfeModel::stack(&batch.iter().map(|e| &e.post).collect::<Vec<_>>())?);
        let features = tape.constant(Tensor::new(
            vec![b, bits],
            counts.iter().map(|c| c.ln_1p()).collect(),
        )?);
        let vae = model.vae().elbo(&p, features, tape.constant(Tensor::new(vec![b, latent], eps)?))?;
        let z = model.interact(&p, pre, post)?;
        let heads = model.heads(&p, z)?;
        let global = global_loss(
            vae.mu,
            vae.var,
            heads.mu_f,
            heads.var_f,
            vae.recon,
            vae.kl,
            cfg.weights.lambda_kl,
        )?;
        let local = local_loss(heads.fp, &counts, &labels, &cfg.weights)?;
        let total = total_loss(global, local, cfg.weights.gamma)?;
        let value = total.item();
        if !value.is_finite() {
            return Err(TfeError::NonFinite);
        }
        trace.total.push(value);
        trace.global.push(global.item());
        trace.local.push(local.item());
        let grads = tape.backward(total)?;
        let g = p.grads(&grads);
        drop(p);
        opt.step(model.params_mut(), &g)?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tfe::model::TfeConfig;
    use rand::Rng;

    #[test]
    fn loss_goes_down_and_is_deterministic() {
        let cfg = TfeConfig {
            d_in: 4,
            d_model: 8,
            heads: 2,
            blocks: 1,
            d_z: 8,
            vae_hidden: 8,
            latent: 2,
            fp_bits: 32,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let examples: Vec<TfeExample> = (0..6)
            .map(|i| {
                let mut fp = vec![0.0; 32];
                fp[i] = 2.0;
                fp[(i * 5 + 3) % 32] = 1.0;
                let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                TfeExample {
                    pre: ExpressionProfile::bulk(vec![0.0; 4]),
                    post: ExpressionProfile::bulk(v),
                    fingerprint: fp,
                    label: format!("m{i}"),
                }
            })
            .collect();
        let train = || {
            let mut m = TfeModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(1));
            let tc = TfeTrainConfig {
                steps: 60,
                batch: 6,
                lr: 1e-2,
                ..Default::default()
            };
            train_tfe(&mut m, &examples, &tc, 7).unwrap()
        };
        let a = train();
        assert!(a.total.last().unwrap() < &(0.7 * a.total[0]), "{:?}", a.total);
        assert_eq!(a, train());
    }
}

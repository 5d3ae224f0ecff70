use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{build_schedule, NoiseSchedule, SizeHistogram};
use crate::molgraph::{Element, EDGE_CATEGORIES};
use crate::tfe::TfeModel;

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::model::DenoiserModel;
use super::DenoiserError;

/// A trained pipeline: schedule, denoiser, optional frozen TFE and the
/// training-set size histogram used to pick atom counts at sampling time.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub schedule: NoiseSchedule,
    pub denoiser: DenoiserModel,
    pub tfe: Option<TfeModel>,
    pub sizes: SizeHistogram,
    pub step: u64,
    pub seed: u64,
}

impl ModelBundle {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<(String, _)> = self
            .denoiser
            .params()
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        if let Some(tfe) = &self.tfe {
            tensors.extend(tfe.params().iter().map(|(n, t)| (n.to_string(), t.clone())));
        }
        Checkpoint {
            steps: self.schedule.steps(),
            kind: self.schedule.kind().clone(),
            step: self.step,
            seed: self.seed,
            meta: CheckpointMeta {
                denoiser: Some(*self.denoiser.config()),
                tfe: self.tfe.as_ref().map(|t| *t.config()),
                size_histogram: self.sizes.counts().iter().map(|(&s, &c)| [s as u64, c]).collect(),
            },
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<ModelBundle, DenoiserError> {
        let cfg = ck
            .meta
            .denoiser
            .ok_or_else(|| DenoiserError::CorruptFile("checkpoint holds no denoiser".into()))?;
        let schedule = build_schedule(ck.steps, ck.kind.clone(), Element::COUNT, EDGE_CATEGORIES)?;
        // Initial values are overwritten; the generator only fixes shapes.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut denoiser = DenoiserModel::new(cfg, &mut rng);
        denoiser.params_mut().assign_named(&ck.tensors)?;
        let tfe = match ck.meta.tfe {
            Some(cfg) => {
                let mut m = TfeModel::new(cfg, &mut rng);
                m.params_mut().assign_named(&ck.tensors)?;
                Some(m)
            }
            None => None,
        };
        let counts: BTreeMap<usize, u64> = ck
            .meta
            .size_histogram
            .iter()
            .map(|&[s, c]| (s as usize, c))
            .collect();
        Ok(ModelBundle {
            schedule,
            denoiser,
            tfe,
            sizes: SizeHistogram::from_counts(counts),
            step: ck.step,
            seed: ck.seed,
        })
    }
}

/// A checkpoint holding only a TFE. Its schedule block is a placeholder
/// (`T = 0`), which no bundle accepts.
pub fn tfe_checkpoint(tfe: &TfeModel, step: u64, seed: u64) -> Checkpoint {
    Checkpoint {
        steps: 0,
        kind: crate::diffusion::TransitionKind::Uniform,
        step,
        seed,
        meta: CheckpointMeta {
            denoiser: None,
            tfe: Some(*tfe.config()),
            size_histogram: Vec::new(),
        },
        tensors: tfe.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
    }
}

/// The TFE stored in any checkpoint that has one.
pub fn tfe_from_checkpoint(ck: &Checkpoint) -> Result<TfeModel, DenoiserError> {
    let cfg = ck
        .meta
        .tfe
        .ok_or_else(|| DenoiserError::CorruptFile("checkpoint holds no TFE".into()))?;
    let mut m = TfeModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(0));
    m.params_mut().assign_named(&ck.tensors)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::TransitionKind;
    use crate::tfe::TfeConfig;

    #[test]
    fn bundle_survives_a_checkpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dcfg = crate::denoiser::model::tests::small_config();
        let tcfg = TfeConfig {
            d_in: 4,
            d_model: 8,
            heads: 2,
            blocks: 1,
            d_z: 6,
            vae_hidden: 4,
            latent: 2,
            fp_bits: 16,
        };
        let b = ModelBundle {
            schedule: build_schedule(7, TransitionKind::Uniform, Element::COUNT, EDGE_CATEGORIES).unwrap(),
            denoiser: DenoiserModel::new(dcfg, &mut rng),
            tfe: Some(TfeModel::new(tcfg, &mut rng)),
            sizes: SizeHistogram::from_sizes([3, 3, 9]),
            step: 10,
            seed: 99,
        };
        let ck = Checkpoint::from_bytes(&b.to_checkpoint().to_bytes().unwrap()).unwrap();
        assert_eq!(ModelBundle::from_checkpoint(&ck).unwrap(), b);

        let tfe = b.tfe.as_ref().unwrap();
        let only = Checkpoint::from_bytes(&tfe_checkpoint(tfe, 3, 5).to_bytes().unwrap()).unwrap();
        assert_eq!(&tfe_from_checkpoint(&only).unwrap(), tfe);
        assert_eq!(&tfe_from_checkpoint(&ck).unwrap(), tfe);
        assert!(ModelBundle::from_checkpoint(&only).is_err());
    }
}

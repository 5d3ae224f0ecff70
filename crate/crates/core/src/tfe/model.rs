use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamSet, Tape, Tensor, Var};
use crate::chem::FINGERPRINT_BITS;
use crate::nn::{Attention, Linear};

use super::vae::VaeStub;
use super::{ExpressionProfile, TfeError};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TfeConfig {
    /// Width of the input expression vectors.
    pub d_in: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub d_z: usize,
    pub vae_hidden: usize,
    pub latent: usize,
    pub fp_bits: usize,
}

impl Default for TfeConfig {
    fn default() -> Self {
        TfeConfig {
            d_in: 128,
            d_model: 128,
            heads: 4,
            blocks: 3,
            d_z: 128,
            vae_hidden: 64,
            latent: 16,
            fp_bits: FINGERPRINT_BITS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct StreamBlock {
    cross: Attention,
    self_attn: Attention,
}

/// Interaction encoder, alignment heads and the VAE stub.
#[derive(Clone, Debug, PartialEq)]
pub struct TfeModel {
    cfg: TfeConfig,
    params: ParamSet,
    in_proj: Linear,
    blocks: Vec<[StreamBlock; 2]>,
    fusion: Attention,
    out: Linear,
    mu_head: Linear,
    logvar_head: Linear,
    fp_head: Linear,
    vae: VaeStub,
}

/// Per-batch outputs of the heads.
pub struct TfeHeads<'t> {
    pub z: Var<'t>,
    pub mu_f: Var<'t>,
    pub var_f: Var<'t>,
    pub fp: Var<'t>,
}

impl TfeModel {
    pub fn new<R: Rng + ?Sized>(cfg: TfeConfig, rng: &mut R) -> Self {
        let mut ps = ParamSet::new();
        let d = cfg.d_model;
        let in_proj = Linear::new(&mut ps, "tfe.in", cfg.d_in, d, true, rng);
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            let mut stream = |s: &str, ps: &mut ParamSet| StreamBlock {
                cross: Attention::new(ps, &format!("tfe.block{b}.{s}.cross"), d, cfg.heads, false, rng),
                self_attn: Attention::new(ps, &format!("tfe.block{b}.{s}.self"), d, cfg.heads, false, rng),
            };
            let pre = stream("pre", &mut ps);
            let post = stream("post", &mut ps);
            blocks.push([pre, post]);
        }
        let fusion = Attention::new(&mut ps, "tfe.fusion", d, cfg.heads, false, rng);
        let out = Linear::new(&mut ps, "tfe.out", d, cfg.d_z, true, rng);
        let mu_head = Linear::new(&mut ps, "tfe.mu_head", cfg.d_z, cfg.latent, true, rng);
        let logvar_head = Linear::zeros(&mut ps, "tfe.logvar_head", cfg.d_z, cfg.latent, true);
        let fp_head = Linear::new(&mut ps, "tfe.fp_head", cfg.d_z, cfg.fp_bits, true, rng);
        let vae = VaeStub::new(&mut ps, cfg.fp_bits, cfg.vae_hidden, cfg.latent, rng);
        TfeModel {
            cfg,
            params: ps,
            in_proj,
            blocks,
            fusion,
            out,
            mu_head,
            logvar_head,
            fp_head,
            vae,
        }
    }

    pub fn config(&self) -> &TfeConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn vae(&self) -> &VaeStub {
        &self.vae
    }

    /// Sets every attention output projection to zero.
    pub fn zero_attention_outputs(&mut self) {
        let mut ids: Vec<_> = self
            .blocks
            .iter()
            .flat_map(|b| b.iter().flat_map(|s| [s.cross.wo, s.self_attn.wo]))
            .collect();
        ids.push(self.fusion.wo);
        for id in ids {
            let shape = self.params.get(id).shape().to_vec();
            *self.params.get_mut(id) = Tensor::zeros(&shape);
        }
    }

    /// `pre`, `post`: `[B, N, d_in]` → `z`: `[B, d_z]`.
    pub fn interact<'t>(&self, p: &Bound<'t>, pre: Var<'t>, post: Var<'t>) -> Result<Var<'t>, TfeError> {
        let (sa, sb) = (pre.shape(), post.shape());
        if sa != sb || sa.len() != 3 || sa[2] != self.cfg.d_in {
            return Err(TfeError::Shape(format!("profiles {sa:?} and {sb:?}")));
        }
        let mut hp = self.in_proj.forward(p, pre)?;
        let mut hq = self.in_proj.forward(p, post)?;
        for [bp, bq] in &self.blocks {
            let cp = hp.add(bp.cross.forward(p, hp, hq, None, None)?)?.layernorm(LN_EPS)?;
            let cq = hq.add(bq.cross.forward(p, hq, hp, None, None)?)?.layernorm(LN_EPS)?;
            hp = cp.add(bp.self_attn.forward(p, cp, cp, None, None)?)?.layernorm(LN_EPS)?;
            hq = cq.add(bq.self_attn.forward(p, cq, cq, None, None)?)?.layernorm(LN_EPS)?;
        }
        let h = Var::concat(&[hp, hq], 1)?;
        let h = h.add(self.fusion.forward(p, h, h, None, None)?)?.layernorm(LN_EPS)?;
        Ok(self.out.forward(p, h.mean_axis(1)?)?)
    }

    pub fn heads<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Result<TfeHeads<'t>, TfeError> {
        Ok(TfeHeads {
            z,
            mu_f: self.mu_head.forward(p, z)?,
            var_f: self.logvar_head.forward(p, z)?.exp(),
            fp: self.fp_head.forward(p, z)?,
        })
    }

    /// Stacks profiles of equal shape into `[B, N, d]`.
    pub fn stack(profiles: &[&ExpressionProfile]) -> Result<Tensor, TfeError> {
        let first = profiles.first().ok_or(TfeError::Shape("no profiles".into()))?;
        let (n, d) = (first.rows(), first.dim());
        let mut data = Vec::with_capacity(profiles.len() * n * d);
        for pr in profiles {
            if pr.rows() != n || pr.dim() != d {
                return Err(TfeError::Shape(format!(
                    "profile {}x{} vs {n}x{d}",
                    pr.rows(),
                    pr.dim()
                )));
            }
            data.extend_from_slice(pr.matrix.data());
        }
        Ok(Tensor::new(vec![profiles.len(), n, d], data)?)
    }

    /// Perturbation embeddings for profile pairs, without recording gradients.
    pub fn embed(&self, pairs: &[(&ExpressionProfile, &ExpressionProfile)]) -> Result<Vec<Vec<f64>>, TfeError> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(32) {
            let tape = Tape::no_grad();
            let p = self.params.bind(&tape)?;
            let pre = tape.constant(Self::stack(&chunk.iter().map(|c| c.0).collect::<Vec<_>>())?);
            let post = tape.constant(Self::stack(&chunk.iter().map(|c| c.1).collect::<Vec<_>>())?);
            let z = self.interact(&p, pre, post)?.to_tensor();
            out.extend(z.data().chunks(self.cfg.d_z).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Fingerprint-space projection `A = h_proj(z)` of one embedding.
    pub fn project_fingerprint(&self, z: &[f64]) -> Result<Vec<f64>, TfeError> {
        let tape = Tape::no_grad();
        let p = self.params.bind(&tape)?;
        let zv = tape.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
        Ok(self.heads(&p, zv)?.fp.to_tensor().into_data())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> TfeConfig {
        TfeConfig {
            d_in: 6,
            d_model: 8,
            heads: 2,
            blocks: 3,
            d_z: 5,
            vae_hidden: 4,
            latent: 3,
            fp_bits: 16,
        }
    }

    fn profile(t: Tensor) -> ExpressionProfile {
        ExpressionProfile {
            matrix: t,
            resolution: super::super::Resolution::SingleCell,
        }
    }

    #[test]
    fn bulk_shape_and_row_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = TfeModel::new(small(), &mut rng);
        let bulk = ExpressionProfile::bulk(vec![0.1, 0.2, -0.3, 0.4, 0.0, 1.0]);
        let z = m.embed(&[(&bulk, &bulk)]).unwrap();
        assert_eq!(z[0].len(), 5);

        let a = init_normal(&[4, 6], 1, &mut rng);
        let b = init_normal(&[4, 6], 1, &mut rng);
        let perm = [2usize, 0, 3, 1];
        let permute = |t: &Tensor| {
            let data: Vec<f64> = perm.iter().flat_map(|&r| t.row(r).to_vec()).collect();
            Tensor::new(vec![4, 6], data).unwrap()
        };
        let (pa, pb) = (profile(a.clone()), profile(b.clone()));
        let (qa, qb) = (profile(permute(&a)), profile(permute(&b)));
        let z1 = m.embed(&[(&pa, &pb)]).unwrap();
        let z2 = m.embed(&[(&qa, &qb)]).unwrap();
        for (u, v) in z1[0].iter().zip(&z2[0]) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_attention_reduces_to_normalized_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = TfeModel::new(small(), &mut rng);
        m.zero_attention_outputs();
        let x = profile(init_normal(&[3, 6], 1, &mut rng));
        let z = m.embed(&[(&x, &x)]).unwrap();
        // Every attention adds zero, so each token is in_proj(x) passed
        // through the seven post-norms (two per block, one after fusion).
        let tape = Tape::no_grad();
        let p = m.params.bind(&tape).unwrap();
        let xv = tape.constant(x.matrix.clone().reshaped(vec![1, 3, 6]).unwrap());
        let mut h = m.in_proj.forward(&p, xv).unwrap();
        for _ in 0..7 {
            h = h.layernorm(LN_EPS).unwrap();
        }
        let want = m.out.forward(&p, h.mean_axis(1).unwrap()).unwrap().to_tensor();
        for (u, v) in z[0].iter().zip(want.data()) {
            assert!((u - v).abs() < 1e-9);
        }
    }
}

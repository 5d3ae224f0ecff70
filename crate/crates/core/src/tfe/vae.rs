//! Small Gaussian VAE over fingerprint features, standing in for a pretrained
//! graph autoencoder so that the global view has encoder statistics to match.

use rand::Rng;

use crate::autodiff::{AdError, Bound, ParamSet, Var};
use crate::nn::Linear;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VaeStub {
    pub enc: Linear,
    pub mu: Linear,
    pub logvar: Linear,
    pub dec: Linear,
    pub latent: usize,
}

/// Batch-mean ELBO terms and encoder statistics.
pub struct VaeOutput<'t> {
    pub recon: Var<'t>,
    pub kl: Var<'t>,
    pub mu: Var<'t>,
    pub var: Var<'t>,
}

/// `½·Σ(μ² + σ² − 1 − log σ²)` per row, averaged over rows.
pub fn kl_standard<'t>(mu: Var<'t>, logvar: Var<'t>) -> Result<Var<'t>, AdError> {
    let rows = if mu.shape().len() > 1 { mu.shape()[0] } else { 1 };
    Ok(mu
        .square()
        .add(logvar.exp())?
        .sub(logvar)?
        .add_scalar(-1.0)
        .sum()
        .scale(0.5 / rows as f64))
}

impl VaeStub {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        input: usize,
        hidden: usize,
        latent: usize,
        rng: &mut R,
    ) -> Self {
        VaeStub {
            enc: Linear::new(ps, "vae.enc", input, hidden, true, rng),
            mu: Linear::new(ps, "vae.mu", hidden, latent, true, rng),
            logvar: Linear::zeros(ps, "vae.logvar", hidden, latent, true),
            dec: Linear::new(ps, "vae.dec", latent, input, true, rng),
            latent,
        }
    }

    /// `x`: `[b, input]` features; `eps`: standard normal noise `[b, latent]`
    /// for the reparameterized draw.
    pub fn elbo<'t>(
        &self,
        p: &Bound<'t>,
        x: Var<'t>,
        eps: Var<'t>,
    ) -> Result<VaeOutput<'t>, AdError> {
        let rows = x.shape()[0];
        let h = self.enc.forward(p, x)?.relu();
        let mu = self.mu.forward(p, h)?;
        let logvar = self.logvar.forward(p, h)?;
        let z = mu.add(logvar.scale(0.5).exp().mul(eps)?)?;
        let x_hat = self.dec.forward(p, z)?;
        let recon = x_hat.sub(x)?.square().sum().scale(1.0 / rows.max(1) as f64);
        let kl = kl_standard(mu, logvar)?;
        Ok(VaeOutput {
            recon,
            kl,
            mu,
            var: logvar.exp(),
        })
    }
}

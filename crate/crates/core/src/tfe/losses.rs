//! Dual-view alignment losses. `A` is the predicted fingerprint-space vector
//! (`b×D`) and `B` the target count fingerprint, both row-major.

use crate::autodiff::{AdError, Tensor, Var};

use super::TfeError;

/// Added to the mask counts of the regression loss.
pub const REGRESSION_EPS: f64 = 1e-8;

/// Default loss weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub gamma: f64,
    pub lambda_kl: f64,
    pub tau: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: 1.0,
            lambda_kl: 0.1,
            tau: 0.1,
            lambda: 0.15,
            alpha: 0.4,
        }
    }
}

fn check_target(a: &Var<'_>, b: &[f64]) -> Result<(usize, usize), TfeError> {
    let shape = a.shape();
    if shape.len() != 2 || shape[0] * shape[1] != b.len() || shape[0] == 0 {
        return Err(TfeError::Shape(format!("A {shape:?} with {} target entries", b.len())));
    }
    if b.iter().any(|&v| !(v >= 0.0)) {
        return Err(TfeError::NegativeTarget);
    }
    Ok((shape[0], shape[1]))
}

fn map_ad(e: AdError) -> TfeError {
    match e {
        AdError::ZeroRow(r) => TfeError::ZeroRow(r),
        other => TfeError::Autodiff(other),
    }
}

/// `L_ELBO + L_align` with `L_ELBO = recon + λ_KL·kl` and
/// `L_align = ‖μ_enc − μ_f‖² + ‖σ²_enc − σ²_f‖²` averaged over batch rows.
pub fn global_loss<'t>(
    mu_enc: Var<'t>,
    var_enc: Var<'t>,
    mu_f: Var<'t>,
    var_f: Var<'t>,
    recon: Var<'t>,
    kl: Var<'t>,
    lambda_kl: f64,
) -> Result<Var<'t>, TfeError> {
    let shape = mu_enc.shape();
    for v in [&var_enc, &mu_f, &var_f] {
        if v.shape() != shape {
            return Err(TfeError::Shape(format!("{:?} vs {shape:?}", v.shape())));
        }
    }
    for v in [&var_enc, &var_f] {
        if v.value().data().iter().any(|&x| !(x > 0.0)) {
            return Err(TfeError::NonPositiveVariance);
        }
    }
    let rows = if shape.len() > 1 { shape[0] } else { 1 } as f64;
    let align = mu_enc
        .sub(mu_f)
        .map_err(map_ad)?
        .square()
        .sum()
        .add(var_enc.sub(var_f).map_err(map_ad)?.square().sum())
        .map_err(map_ad)?
        .scale(1.0 / rows);
    recon
        .add(kl.scale(lambda_kl))
        .and_then(|elbo| elbo.add(align))
        .map_err(map_ad)
}

/// Masked InfoNCE over L2-normalized rows plus `λ·mean((Â ⊙ [B = 0])²)`,
/// where `Â` is the normalized `A`.
pub fn contrast_loss<'t>(
    a: Var<'t>,
    b: &[f64],
    labels: &[String],
    tau: f64,
    lambda: f64,
) -> Result<Var<'t>, TfeError> {
    let (rows, dim) = check_target(&a, b)?;
    if labels.len() != rows {
        return Err(TfeError::Shape(format!("{} labels for {rows} rows", labels.len())));
    }
    let tape = a.tape();
    let an = a.normalize_rows().map_err(map_ad)?;
    let bn = tape
        .constant(Tensor::new(vec![rows, dim], b.to_vec()).map_err(map_ad)?)
        .normalize_rows()
        .map_err(map_ad)?;
    let sim = an.bmm(bn, true).map_err(map_ad)?.scale(1.0 / tau);
    let mut same = vec![false; rows * rows];
    for i in 0..rows {
        for j in 0..rows {
            same[i * rows + j] = i != j && labels[i] == labels[j];
        }
    }
    let sim = sim.masked_fill(&same, f64::NEG_INFINITY).map_err(map_ad)?;
    let targets: Vec<usize> = (0..rows).collect();
    let mut loss = sim.cross_entropy(&targets, None).map_err(map_ad)?;
    if lambda > 0.0 {
        let zero_mask: Vec<f64> = b.iter().map(|&v| if v == 0.0 { 1.0 } else { 0.0 }).collect();
        let m = tape.constant(Tensor::new(vec![rows, dim], zero_mask).map_err(map_ad)?);
        let spa = an.mul(m).map_err(map_ad)?.square().mean();
        loss = loss.add(spa.scale(lambda)).map_err(map_ad)?;
    }
    Ok(loss)
}

/// `L_pos + α·L_neg` with `log(1 + B)` weights on the non-zero targets.
pub fn regression_loss<'t>(a: Var<'t>, b: &[f64], alpha: f64) -> Result<Var<'t>, TfeError> {
    let (rows, dim) = check_target(&a, b)?;
    let tape = a.tape();
    let shape = vec![rows, dim];
    let pos: Vec<f64> = b.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let n_pos: f64 = pos.iter().sum();
    let n_neg = b.len() as f64 - n_pos;
    let w: Vec<f64> = b.iter().map(|&v| if v > 0.0 { v.ln_1p() } else { 0.0 }).collect();
    let neg: Vec<f64> = pos.iter().map(|p| 1.0 - p).collect();
    let c = |data: Vec<f64>| Tensor::new(shape.clone(), data).map(|t| tape.constant(t));
    let (w, neg, target) = (c(w).map_err(map_ad)?, c(neg).map_err(map_ad)?, c(b.to_vec()).map_err(map_ad)?);
    let l_pos = a
        .sub(target)
        .and_then(|d| d.square().mul(w))
        .map_err(map_ad)?
        .sum()
        .scale(1.0 / (n_pos + REGRESSION_EPS));
    let l_neg = a
        .square()
        .mul(neg)
        .map_err(map_ad)?
        .sum()
        .scale(1.0 / (n_neg + REGRESSION_EPS));
    l_pos.add(l_neg.scale(alpha)).map_err(map_ad)
}

pub fn local_loss<'t>(
    a: Var<'t>,
    b: &[f64],
    labels: &[String],
    w: &LossWeights,
) -> Result<Var<'t>, TfeError> {
    let c = contrast_loss(a, b, labels, w.tau, w.lambda)?;
    let r = regression_loss(a, b, w.alpha)?;
    r.add(c).map_err(map_ad)
}

pub fn total_loss<'t>(global: Var<'t>, local: Var<'t>, gamma: f64) -> Result<Var<'t>, TfeError> {
    global.add(local.scale(gamma)).map_err(map_ad)
}

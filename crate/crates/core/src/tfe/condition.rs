use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Bound, Tensor, Var};
use crate::nn::Linear;

use super::TfeError;

/// Output of the TFE for one perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationEmbedding {
    pub z: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Conditioned,
    Dropped,
}

/// Condition vector fed to the denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionEmbedding {
    pub c: Vec<f64>,
    pub provenance: Provenance,
}

/// Per row: with probability `p` the condition is `e_drop`, otherwise
/// `embedder(z)`; Gaussian noise of scale `noise_sigma` is added either way.
/// For each row the drop decision is drawn before that row's noise.
#[allow(clippy::too_many_arguments)]
pub fn condition_dropout<'t, R: Rng + ?Sized>(
    params: &Bound<'t>,
    embedder: &Linear,
    z: Var<'t>,
    e_drop: Var<'t>,
    p: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<(Var<'t>, Vec<Provenance>), TfeError> {
    if !(0.0..=1.0).contains(&p) || !(noise_sigma >= 0.0) {
        return Err(TfeError::InvalidArgument(format!("p={p}, sigma={noise_sigma}")));
    }
    let rows = z.shape()[0];
    let emb = embedder.forward(params, z)?;
    let d = emb.shape()[1];
    if e_drop.shape() != [d] {
        return Err(TfeError::Shape(format!("e_drop {:?} for width {d}", e_drop.shape())));
    }
    let normal = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut keep = Vec::with_capacity(rows * d);
    let mut noise = Vec::with_capacity(rows * d);
    let mut prov = Vec::with_capacity(rows);
    for _ in 0..rows {
        let dropped = p > 0.0 && rng.gen::<f64>() < p;
        prov.push(if dropped { Provenance::Dropped } else { Provenance::Conditioned });
        keep.extend(std::iter::repeat_n(if dropped { 0.0 } else { 1.0 }, d));
        if noise_sigma > 0.0 {
            noise.extend((0..d).map(|_| normal.sample(rng)));
        } else {
            noise.extend(std::iter::repeat_n(0.0, d));
        }
    }
    let tape = z.tape();
    let drop: Vec<f64> = keep.iter().map(|k| 1.0 - k).collect();
    let keep = tape.constant(Tensor::new(vec![rows, d], keep)?);
    let drop = tape.constant(Tensor::new(vec![rows, d], drop)?);
    let noise = tape.constant(Tensor::new(vec![rows, d], noise)?);
    let c = emb
        .mul(keep)?
        .add(e_drop.expand(0, rows)?.mul(drop)?)?
        .add(noise)?;
    Ok((c, prov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamSet, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamSet, Linear) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        let emb = Linear::new(&mut ps, "emb", 3, 4, true, &mut rng);
        ps.add("e_drop", Tensor::vector(vec![9.0, 8.0, 7.0, 6.0]));
        (ps, emb)
    }

    #[test]
    fn extremes_are_exact() {
        let (ps, emb) = setup();
        let tape = Tape::new();
        let p = ps.bind(&tape).unwrap();
        let e_drop = p.var(ps.find("e_drop").unwrap());
        let z = tape.constant(Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, -1.0, 0.0, 2.0]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, prov) = condition_dropout(&p, &emb, z, e_drop, 0.0, 0.0, &mut rng).unwrap();
        assert_eq!(prov, vec![Provenance::Conditioned; 2]);
        assert_eq!(c.to_tensor(), emb.forward(&p, z).unwrap().to_tensor());
        let (c, prov) = condition_dropout(&p, &emb, z, e_drop, 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(prov, vec![Provenance::Dropped; 2]);
        assert_eq!(c.to_tensor().row(1), &[9.0, 8.0, 7.0, 6.0]);
    }

    #[test]
    fn drop_rate_is_binomial() {
        let (ps, emb) = setup();
        let tape = Tape::no_grad();
        let p = ps.bind(&tape).unwrap();
        let e_drop = p.var(ps.find("e_drop").unwrap());
        let n = 100_000;
        let z = tape.constant(Tensor::zeros(&[n, 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, prov) = condition_dropout(&p, &emb, z, e_drop, 0.1, 0.1, &mut rng).unwrap();
        let dropped = prov.iter().filter(|&&p| p == Provenance::Dropped).count() as f64;
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        assert!((dropped - 0.1 * n as f64).abs() < 3.0 * sigma);
    }
}

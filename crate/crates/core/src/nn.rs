//! Small layer helpers shared by the TFE and the denoiser.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{AdError, Bound, ParamId, ParamSet, Tensor, Var};

/// Gaussian init with standard deviation `1/√fan_in`.
pub fn init_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let std = 1.0 / (fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| normal.sample(rng)).collect())
        .expect("shape matches")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), init_normal(&[d_in, d_out], d_in, rng));
        let b = bias.then(|| ps.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Linear { w, b }
    }

    /// Zero weights and bias; the layer starts as the constant 0.
    pub fn zeros(ps: &mut ParamSet, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let w = ps.add(format!("{name}.w"), Tensor::zeros(&[d_in, d_out]));
        let b = bias.then(|| ps.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Linear { w, b }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>, AdError> {
        let y = x.matmul(p.var(self.w))?;
        match self.b {
            Some(b) => y.add(p.var(b)),
            None => Ok(y),
        }
    }
}

/// Multi-head scaled dot-product attention with bias-free projections.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub d: usize,
}

impl Attention {
    /// With `zero_out` the output projection starts at zero, so the block is
    /// initially an identity on its residual path.
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        d: usize,
        heads: usize,
        zero_out: bool,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && d.is_multiple_of(heads), "width must split across heads");
        let mut mat = |suffix: &str, zero: bool| {
            let t = if zero {
                Tensor::zeros(&[d, d])
            } else {
                init_normal(&[d, d], d, rng)
            };
            ps.add(format!("{name}.{suffix}"), t)
        };
        Attention {
            wq: mat("wq", false),
            wk: mat("wk", false),
            wv: mat("wv", false),
            wo: mat("wo", zero_out),
            heads,
            d,
        }
    }

    /// `q_in`: `[B, Nq, d]`, `kv_in`: `[B, Nk, d]`. `bias` is added to the
    /// `[B, H, Nq, Nk]` logits; `key_mask` (length `B·Nk`, true = padded)
    /// removes keys.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        q_in: Var<'t>,
        kv_in: Var<'t>,
        bias: Option<Var<'t>>,
        key_mask: Option<&[bool]>,
    ) -> Result<Var<'t>, AdError> {
        let qs = q_in.shape();
        let ks = kv_in.shape();
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != self.d || ks[2] != self.d {
            return Err(AdError::ShapeMismatch(format!("attention on {qs:?} and {ks:?}")));
        }
        let (b, nq, nk, h) = (qs[0], qs[1], ks[1], self.heads);
        let dh = self.d / h;
        let split = |x: Var<'t>, n: usize| x.reshape(&[b, n, h, dh])?.permute(&[0, 2, 1, 3]);
        let q = split(q_in.matmul(p.var(self.wq))?, nq)?;
        let k = split(kv_in.matmul(p.var(self.wk))?, nk)?;
        let v = split(kv_in.matmul(p.var(self.wv))?, nk)?;
        let mut scores = q.bmm(k, true)?.scale(1.0 / (dh as f64).sqrt());
        if let Some(bias) = bias {
            scores = scores.add(bias)?;
        }
        if let Some(mask) = key_mask {
            if mask.len() != b * nk {
                return Err(AdError::ShapeMismatch("key mask length".into()));
            }
            let mut full = Vec::with_capacity(b * h * nq * nk);
            for bi in 0..b {
                for _ in 0..h * nq {
                    full.extend_from_slice(&mask[bi * nk..(bi + 1) * nk]);
                }
            }
            scores = scores.masked_fill(&full, f64::NEG_INFINITY)?;
        }
        let att = scores.softmax()?;
        let out = att
            .bmm(v, false)?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, nq, self.d])?;
        out.matmul(p.var(self.wo))
    }
}

/// Two-layer ReLU MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        ps: &mut ParamSet,
        name: &str,
        d: usize,
        hidden: usize,
        zero_out: bool,
        rng: &mut R,
    ) -> Self {
        let l1 = Linear::new(ps, &format!("{name}.l1"), d, hidden, true, rng);
        let l2 = if zero_out {
            Linear::zeros(ps, &format!("{name}.l2"), hidden, d, true)
        } else {
            Linear::new(ps, &format!("{name}.l2"), hidden, d, true, rng)
        };
        FeedForward { l1, l2 }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>, AdError> {
        self.l2.forward(p, self.l1.forward(p, x)?.relu())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn attention_is_permutation_equivariant_and_masks_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let att = Attention::new(&mut ps, "a", 8, 2, false, &mut rng);
        let x = init_normal(&[1, 4, 8], 1, &mut rng);
        let tape = Tape::no_grad();
        let p = ps.bind(&tape).unwrap();
        let xv = tape.constant(x.clone());
        let y = att.forward(&p, xv, xv, None, None).unwrap().to_tensor();
        // Swap tokens 0 and 2.
        let mut xs = x.clone();
        for c in 0..8 {
            xs.data_mut().swap(c, 16 + c);
        }
        let xsv = tape.constant(xs);
        let ys = att.forward(&p, xsv, xsv, None, None).unwrap().to_tensor();
        for c in 0..8 {
            assert!((y.data()[c] - ys.data()[16 + c]).abs() < 1e-12);
            assert!((y.data()[8 + c] - ys.data()[8 + c]).abs() < 1e-12);
        }
        // A masked key cannot influence the output.
        let mask = [false, false, false, true];
        let a = att.forward(&p, xv, xv, None, Some(&mask)).unwrap().to_tensor();
        let mut x2 = x.clone();
        x2.data_mut()[24..32].iter_mut().for_each(|v| *v += 5.0);
        let x2v = tape.constant(x2);
        let q = tape.constant(x);
        let b = att.forward(&p, q, x2v, None, Some(&mask)).unwrap().to_tensor();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::new();
        let att = Attention::new(&mut ps, "a", 4, 2, false, &mut rng);
        let x = init_normal(&[1, 3, 4], 1, &mut rng);
        let r = grad_check(
            |xv| {
                let p = ps.bind(xv.tape())?;
                Ok(att.forward(&p, xv, xv, None, None)?.square().sum())
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}

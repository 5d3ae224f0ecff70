//! Differentiable primitives. Broadcasting is limited to a right operand
//! whose shape is a suffix of the left operand's shape (bias rows, scalars).

use super::tape::BackCtx;
use super::{AdError, Tensor, Var};

fn mismatch(what: &str, a: &[usize], b: &[usize]) -> AdError {
    AdError::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

fn suffix_ok(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

/// Row-major GEMM: c = op(a)·op(b) + beta·c with logical sizes m×k and k×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly the extents described by the
    // dimensions and strides above, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn reduce_suffix(g: &[f64], nb: usize) -> Vec<f64> {
    let mut out = vec![0.0; nb];
    for chunk in g.chunks(nb) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<'t> Var<'t> {
    fn unary(
        self,
        f: impl Fn(f64) -> f64,
        backward: impl Fn(&BackCtx<'_>) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Var<'t> {
        let value = {
            let x = self.value();
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
                .expect("same shape")
        };
        self.tape.op(value, &[self], backward)
    }

    fn binary(
        self,
        other: Var<'t>,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        backward: impl Fn(&BackCtx<'_>) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Result<Var<'t>, AdError> {
        let value = {
            let a = self.value();
            let b = other.value();
            if !suffix_ok(a.shape(), b.shape()) {
                return Err(mismatch(what, a.shape(), b.shape()));
            }
            let nb = b.numel();
            let data = if nb == 0 {
                Vec::new()
            } else {
                a.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, b.data()[i % nb]))
                    .collect()
            };
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.tape.op(value, &[self, other], backward))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "add", |a, b| a + b, |c| {
            let nb = c.inputs[1].numel();
            vec![
                c.needs[0].then(|| c.grad.to_vec()),
                c.needs[1].then(|| reduce_suffix(c.grad, nb)),
            ]
        })
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "sub", |a, b| a - b, |c| {
            let nb = c.inputs[1].numel();
            vec![
                c.needs[0].then(|| c.grad.to_vec()),
                c.needs[1].then(|| reduce_suffix(c.grad, nb).into_iter().map(|v| -v).collect()),
            ]
        })
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        self.binary(other, "mul", |a, b| a * b, |c| {
            let a = c.inputs[0].data();
            let b = c.inputs[1].data();
            let nb = b.len();
            let ga = c.needs[0].then(|| {
                c.grad
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g * b[i % nb])
                    .collect()
            });
            let gb = c.needs[1].then(|| {
                let prod: Vec<f64> = c.grad.iter().zip(a).map(|(g, x)| g * x).collect();
                reduce_suffix(&prod, nb)
            });
            vec![ga, gb]
        })
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(
            move |x| x * s,
            move |c| vec![Some(c.grad.iter().map(|g| g * s).collect())],
        )
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary(move |x| x + s, |c| vec![Some(c.grad.to_vec())])
    }

    pub fn relu(self) -> Var<'t> {
        {
            let x = self.value();
            for &v in x.data() {
                self.tape.note_kink(v);
            }
        }
        self.unary(
            |x| x.max(0.0),
            |c| {
                let x = c.inputs[0].data();
                vec![Some(
                    c.grad
                        .iter()
                        .zip(x)
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            },
        )
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, |c| {
            vec![Some(
                c.grad.iter().zip(c.output.data()).map(|(g, y)| g * y).collect(),
            )]
        })
    }

    /// Natural log; every input entry must be strictly positive.
    pub fn log(self) -> Result<Var<'t>, AdError> {
        if self.value().data().iter().any(|&v| !(v > 0.0)) {
            return Err(AdError::NonFiniteInput("log of a non-positive value"));
        }
        Ok(self.unary(f64::ln, |c| {
            vec![Some(
                c.grad.iter().zip(c.inputs[0].data()).map(|(g, x)| g / x).collect(),
            )]
        }))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(
            |x| x * x,
            |c| {
                vec![Some(
                    c.grad
                        .iter()
                        .zip(c.inputs[0].data())
                        .map(|(g, x)| 2.0 * g * x)
                        .collect(),
                )]
            },
        )
    }

    /// Softmax over the last axis. Entries equal to −∞ get probability 0.
    pub fn softmax(self) -> Result<Var<'t>, AdError> {
        let value = {
            let x = self.value();
            let k = *x.shape().last().ok_or_else(|| mismatch("softmax", x.shape(), &[]))?;
            let mut out = x.data().to_vec();
            if k > 0 {
                for row in out.chunks_mut(k) {
                    softmax_in_place(row)?;
                }
            }
            Tensor::new(x.shape().to_vec(), out)?
        };
        Ok(self.tape.op(value, &[self], |c| {
            let y = c.output.data();
            let k = *c.output.shape().last().unwrap();
            let mut gx = vec![0.0; y.len()];
            for ((gr, yr), out) in c.grad.chunks(k).zip(y.chunks(k)).zip(gx.chunks_mut(k)) {
                let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                for ((o, g), y) in out.iter_mut().zip(gr).zip(yr) {
                    *o = y * (g - dot);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Layer normalization over the last axis without affine parameters.
    pub fn layernorm(self, eps: f64) -> Result<Var<'t>, AdError> {
        let (value, inv_std) = {
            let x = self.value();
            let k = *x.shape().last().ok_or_else(|| mismatch("layernorm", x.shape(), &[]))?;
            let mut out = x.data().to_vec();
            let mut inv = Vec::with_capacity(out.len() / k.max(1));
            if k > 0 {
                for row in out.chunks_mut(k) {
                    let mean = row.iter().sum::<f64>() / k as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k as f64;
                    let is = 1.0 / (var + eps).sqrt();
                    row.iter_mut().for_each(|v| *v = (*v - mean) * is);
                    inv.push(is);
                }
            }
            (Tensor::new(x.shape().to_vec(), out)?, inv)
        };
        Ok(self.tape.op(value, &[self], move |c| {
            let y = c.output.data();
            let k = *c.output.shape().last().unwrap();
            let mut gx = vec![0.0; y.len()];
            for (r, ((gr, yr), out)) in c
                .grad
                .chunks(k)
                .zip(y.chunks(k))
                .zip(gx.chunks_mut(k))
                .enumerate()
            {
                let mg = gr.iter().sum::<f64>() / k as f64;
                let mgy = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / k as f64;
                for ((o, g), y) in out.iter_mut().zip(gr).zip(yr) {
                    *o = inv_std[r] * (g - mg - y * mgy);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn sum(self) -> Var<'t> {
        let value = Tensor::scalar(self.value().data().iter().sum());
        self.tape.op(value, &[self], |c| {
            vec![Some(vec![c.grad[0]; c.inputs[0].numel()])]
        })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().numel().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over one axis, which is removed from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>, AdError> {
        let (value, outer, len, inner) = {
            let x = self.value();
            let shape = x.shape();
            if axis >= shape.len() {
                return Err(AdError::ShapeMismatch(format!("axis {axis} of {shape:?}")));
            }
            let outer: usize = shape[..axis].iter().product();
            let len = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                    out[o * inner..(o + 1) * inner]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(a, b)| *a += b);
                }
            }
            let mut new_shape = shape.to_vec();
            new_shape.remove(axis);
            (Tensor::new(new_shape, out)?, outer, len, inner)
        };
        Ok(self.tape.op(value, &[self], move |c| {
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                let g = &c.grad[o * inner..(o + 1) * inner];
                for l in 0..len {
                    gx[(o * len + l) * inner..(o * len + l + 1) * inner].copy_from_slice(g);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>, AdError> {
        let len = self
            .value()
            .shape()
            .get(axis)
            .copied()
            .ok_or_else(|| AdError::ShapeMismatch(format!("axis {axis}")))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len.max(1) as f64))
    }

    /// `[.., m, k] × [k, n] → [.., m, n]`.
    pub fn matmul(self, w: Var<'t>) -> Result<Var<'t>, AdError> {
        let (value, m, k, n) = {
            let a = self.value();
            let b = w.value();
            if a.ndim() < 1 || b.ndim() != 2 || a.shape()[a.ndim() - 1] != b.shape()[0] {
                return Err(mismatch("matmul", a.shape(), b.shape()));
            }
            let k = b.shape()[0];
            let n = b.shape()[1];
            let m = a.numel() / k.max(1);
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut out, 0.0);
            let mut shape = a.shape().to_vec();
            *shape.last_mut().unwrap() = n;
            (Tensor::new(shape, out)?, m, k, n)
        };
        Ok(self.tape.op(value, &[self, w], move |c| {
            let a = c.inputs[0].data();
            let b = c.inputs[1].data();
            let ga = c.needs[0].then(|| {
                let mut g = vec![0.0; m * k];
                gemm(m, n, k, c.grad, false, b, true, &mut g, 0.0);
                g
            });
            let gb = c.needs[1].then(|| {
                let mut g = vec![0.0; k * n];
                gemm(k, m, n, a, true, c.grad, false, &mut g, 0.0);
                g
            });
            vec![ga, gb]
        }))
    }

    /// Batched product over matching leading axes: `[.., m, k] × [.., k, n]`,
    /// or `[.., n, k]` for the right operand when `transpose_b` is set.
    pub fn bmm(self, other: Var<'t>, transpose_b: bool) -> Result<Var<'t>, AdError> {
        let (value, batch, m, k, n) = {
            let a = self.value();
            let b = other.value();
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return Err(mismatch("bmm", sa, sb));
            }
            let r = sa.len();
            let (m, k) = (sa[r - 2], sa[r - 1]);
            let (kb, n) = if transpose_b {
                (sb[r - 1], sb[r - 2])
            } else {
                (sb[r - 2], sb[r - 1])
            };
            if k != kb {
                return Err(mismatch("bmm", sa, sb));
            }
            let batch: usize = sa[..r - 2].iter().product();
            let mut out = vec![0.0; batch * m * n];
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &a.data()[i * m * k..(i + 1) * m * k],
                    false,
                    &b.data()[i * k * n..(i + 1) * k * n],
                    transpose_b,
                    &mut out[i * m * n..(i + 1) * m * n],
                    0.0,
                );
            }
            let mut shape = sa[..r - 2].to_vec();
            shape.extend([m, n]);
            (Tensor::new(shape, out)?, batch, m, k, n)
        };
        Ok(self.tape.op(value, &[self, other], move |c| {
            let a = c.inputs[0].data();
            let b = c.inputs[1].data();
            let ga = c.needs[0].then(|| {
                let mut g = vec![0.0; batch * m * k];
                for i in 0..batch {
                    // dA = dC · opB^T
                    gemm(
                        m,
                        n,
                        k,
                        &c.grad[i * m * n..(i + 1) * m * n],
                        false,
                        &b[i * k * n..(i + 1) * k * n],
                        !transpose_b,
                        &mut g[i * m * k..(i + 1) * m * k],
                        0.0,
                    );
                }
                g
            });
            let gb = c.needs[1].then(|| {
                let mut g = vec![0.0; batch * k * n];
                for i in 0..batch {
                    let ai = &a[i * m * k..(i + 1) * m * k];
                    let gi = &c.grad[i * m * n..(i + 1) * m * n];
                    let out = &mut g[i * k * n..(i + 1) * k * n];
                    if transpose_b {
                        // B is n×k: dB = dC^T · A
                        gemm(n, m, k, gi, true, ai, false, out, 0.0);
                    } else {
                        gemm(k, m, n, ai, true, gi, false, out, 0.0);
                    }
                }
                g
            });
            vec![ga, gb]
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>, AdError> {
        let value = self.to_tensor().reshaped(shape.to_vec())?;
        Ok(self.tape.op(value, &[self], |c| vec![Some(c.grad.to_vec())]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>, AdError> {
        let (value, map) = {
            let x = self.value();
            let shape = x.shape();
            let mut seen = vec![false; shape.len()];
            if perm.len() != shape.len()
                || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
            {
                return Err(AdError::ShapeMismatch(format!(
                    "permutation {perm:?} for {shape:?}"
                )));
            }
            let in_strides = strides(shape);
            let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
            let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
            let map = gather_map(&out_shape, &src_strides);
            let data = map.iter().map(|&s| x.data()[s]).collect();
            (Tensor::new(out_shape, data)?, map)
        };
        Ok(self.tape.op(value, &[self], move |c| {
            let mut gx = vec![0.0; map.len()];
            for (g, &s) in c.grad.iter().zip(&map) {
                gx[s] = *g;
            }
            vec![Some(gx)]
        }))
    }

    /// Inserts a new axis at `axis` and repeats the tensor `size` times along it.
    pub fn expand(self, axis: usize, size: usize) -> Result<Var<'t>, AdError> {
        let (value, outer, inner) = {
            let x = self.value();
            let shape = x.shape();
            if axis > shape.len() {
                return Err(AdError::ShapeMismatch(format!("expand axis {axis} of {shape:?}")));
            }
            let outer: usize = shape[..axis].iter().product();
            let inner: usize = shape[axis..].iter().product();
            let mut data = Vec::with_capacity(outer * size * inner);
            for o in 0..outer {
                let src = &x.data()[o * inner..(o + 1) * inner];
                for _ in 0..size {
                    data.extend_from_slice(src);
                }
            }
            let mut new_shape = shape.to_vec();
            new_shape.insert(axis, size);
            (Tensor::new(new_shape, data)?, outer, inner)
        };
        Ok(self.tape.op(value, &[self], move |c| {
            let mut gx = vec![0.0; outer * inner];
            for o in 0..outer {
                let out = &mut gx[o * inner..(o + 1) * inner];
                for s in 0..size {
                    let base = (o * size + s) * inner;
                    out.iter_mut()
                        .zip(&c.grad[base..base + inner])
                        .for_each(|(a, b)| *a += b);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>, AdError> {
        let first = parts
            .first()
            .ok_or_else(|| AdError::ShapeMismatch("concat of nothing".into()))?;
        let tape = first.tape;
        let (value, outer, lens, inner) = {
            let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let base = vals[0].shape().to_vec();
            if axis >= base.len() {
                return Err(AdError::ShapeMismatch(format!("concat axis {axis} of {base:?}")));
            }
            for v in &vals {
                let s = v.shape();
                if s.len() != base.len()
                    || s.iter()
                        .zip(&base)
                        .enumerate()
                        .any(|(i, (a, b))| i != axis && a != b)
                {
                    return Err(mismatch("concat", &base, s));
                }
            }
            let outer: usize = base[..axis].iter().product();
            let inner: usize = base[axis + 1..].iter().product();
            let lens: Vec<usize> = vals.iter().map(|v| v.shape()[axis]).collect();
            let total: usize = lens.iter().sum();
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for (v, &l) in vals.iter().zip(&lens) {
                    data.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
                }
            }
            let mut shape = base;
            shape[axis] = total;
            (Tensor::new(shape, data)?, outer, lens, inner)
        };
        Ok(tape.op(value, parts, move |c| {
            let total: usize = lens.iter().sum();
            let mut out: Vec<Option<Vec<f64>>> = Vec::with_capacity(lens.len());
            let mut offset = 0;
            for (p, &l) in lens.iter().enumerate() {
                if !c.needs[p] {
                    out.push(None);
                    offset += l;
                    continue;
                }
                let mut g = Vec::with_capacity(outer * l * inner);
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    g.extend_from_slice(&c.grad[start..start + l * inner]);
                }
                out.push(Some(g));
                offset += l;
            }
            out
        }))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>, AdError> {
        let (value, outer, len, inner) = {
            let x = self.value();
            let shape = x.shape();
            if axis >= shape.len() || start > end || end > shape[axis] {
                return Err(AdError::ShapeMismatch(format!(
                    "slice {start}..{end} on axis {axis} of {shape:?}"
                )));
            }
            let outer: usize = shape[..axis].iter().product();
            let len = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let mut data = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                data.extend_from_slice(
                    &x.data()[(o * len + start) * inner..(o * len + end) * inner],
                );
            }
            let mut s = shape.to_vec();
            s[axis] = end - start;
            (Tensor::new(s, data)?, outer, len, inner)
        };
        Ok(self.tape.op(value, &[self], move |c| {
            let w = (end - start) * inner;
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                gx[(o * len + start) * inner..(o * len + end) * inner]
                    .copy_from_slice(&c.grad[o * w..(o + 1) * w]);
            }
            vec![Some(gx)]
        }))
    }

    /// Rows of a `[V, d]` table; the result has shape `index_shape + [d]`.
    pub fn embedding(
        self,
        indices: &[usize],
        index_shape: &[usize],
    ) -> Result<Var<'t>, AdError> {
        let (value, vocab, d) = {
            let table = self.value();
            if table.ndim() != 2 || index_shape.iter().product::<usize>() != indices.len() {
                return Err(mismatch("embedding", table.shape(), index_shape));
            }
            let (vocab, d) = (table.shape()[0], table.shape()[1]);
            if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
                return Err(AdError::ShapeMismatch(format!(
                    "embedding index {bad} out of {vocab}"
                )));
            }
            let mut data = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                data.extend_from_slice(&table.data()[i * d..(i + 1) * d]);
            }
            let mut shape = index_shape.to_vec();
            shape.push(d);
            (Tensor::new(shape, data)?, vocab, d)
        };
        let idx = indices.to_vec();
        Ok(self.tape.op(value, &[self], move |c| {
            let mut gx = vec![0.0; vocab * d];
            for (r, &i) in idx.iter().enumerate() {
                gx[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(&c.grad[r * d..(r + 1) * d])
                    .for_each(|(a, b)| *a += b);
            }
            vec![Some(gx)]
        }))
    }

    /// Replaces entries where `mask` is true by `fill` (which may be −∞).
    pub fn masked_fill(self, mask: &[bool], fill: f64) -> Result<Var<'t>, AdError> {
        let value = {
            let x = self.value();
            if mask.len() != x.numel() {
                return Err(mismatch("masked_fill", x.shape(), &[mask.len()]));
            }
            let data = x
                .data()
                .iter()
                .zip(mask)
                .map(|(&v, &m)| if m { fill } else { v })
                .collect();
            Tensor::new(x.shape().to_vec(), data)?
        };
        let mask = mask.to_vec();
        Ok(self.tape.op(value, &[self], move |c| {
            vec![Some(
                c.grad
                    .iter()
                    .zip(&mask)
                    .map(|(&g, &m)| if m { 0.0 } else { g })
                    .collect(),
            )]
        }))
    }

    /// Weighted mean over rows of `−log softmax(logits)[target]`, rows taken
    /// along the last axis. Rows with weight 0 are skipped entirely.
    pub fn cross_entropy(
        self,
        targets: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<Var<'t>, AdError> {
        let (value, probs, k) = {
            let x = self.value();
            let k = *x.shape().last().ok_or_else(|| mismatch("cross_entropy", x.shape(), &[]))?;
            let rows = if k == 0 { 0 } else { x.numel() / k };
            if targets.len() != rows || weights.is_some_and(|w| w.len() != rows) {
                return Err(mismatch("cross_entropy", x.shape(), &[targets.len()]));
            }
            if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
                return Err(AdError::ShapeMismatch(format!("target {bad} out of {k}")));
            }
            let mut probs = x.data().to_vec();
            let mut total = 0.0;
            let mut wsum = 0.0;
            for (r, row) in probs.chunks_mut(k).enumerate() {
                let w = weights.map_or(1.0, |w| w[r]);
                if w == 0.0 {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    continue;
                }
                softmax_in_place(row)?;
                total -= w * row[targets[r]].ln();
                wsum += w;
            }
            if wsum <= 0.0 {
                return Err(AdError::InvalidArgument("cross_entropy with zero total weight".into()));
            }
            (Tensor::scalar(total / wsum), (probs, wsum), k)
        };
        let targets = targets.to_vec();
        let weights = weights.map(<[f64]>::to_vec);
        let (probs, wsum) = probs;
        Ok(self.tape.op(value, &[self], move |c| {
            let g0 = c.grad[0] / wsum;
            let mut gx = vec![0.0; probs.len()];
            for (r, (out, p)) in gx.chunks_mut(k).zip(probs.chunks(k)).enumerate() {
                let w = weights.as_ref().map_or(1.0, |w| w[r]);
                if w == 0.0 {
                    continue;
                }
                for (o, &pv) in out.iter_mut().zip(p) {
                    *o = g0 * w * pv;
                }
                out[targets[r]] -= g0 * w;
            }
            vec![Some(gx)]
        }))
    }

    /// Divides every row (last axis) by its L2 norm.
    pub fn normalize_rows(self) -> Result<Var<'t>, AdError> {
        let (value, norms) = {
            let x = self.value();
            let k = *x.shape().last().ok_or_else(|| mismatch("normalize_rows", x.shape(), &[]))?;
            let mut out = x.data().to_vec();
            let mut norms = Vec::new();
            for (r, row) in out.chunks_mut(k.max(1)).enumerate() {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 {
                    return Err(AdError::ZeroRow(r));
                }
                row.iter_mut().for_each(|v| *v /= n);
                norms.push(n);
            }
            (Tensor::new(x.shape().to_vec(), out)?, norms)
        };
        Ok(self.tape.op(value, &[self], move |c| {
            let k = *c.output.shape().last().unwrap();
            let y = c.output.data();
            let mut gx = vec![0.0; y.len()];
            for (r, ((gr, yr), out)) in c
                .grad
                .chunks(k)
                .zip(y.chunks(k))
                .zip(gx.chunks_mut(k))
                .enumerate()
            {
                let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                for ((o, g), y) in out.iter_mut().zip(gr).zip(yr) {
                    *o = (g - y * dot) / norms[r];
                }
            }
            vec![Some(gx)]
        }))
    }
}

/// Numerically stable softmax of one row; −∞ entries map to 0.
pub(crate) fn softmax_in_place(row: &mut [f64]) -> Result<(), AdError> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(AdError::NonFiniteInput("softmax row without a finite entry"));
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
    Ok(())
}

/// Flat source index for every output position, given per-axis source strides.
fn gather_map(out_shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let numel: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..numel {
        map.push(src);
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

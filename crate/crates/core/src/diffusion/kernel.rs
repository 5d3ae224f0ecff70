//! Forward noising, the closed-form posterior, guidance and the reverse step.

use rand::Rng;

use crate::autodiff::softmax_in_place;

use super::schedule::{NoiseSchedule, TransitionSchedule};
use super::state::CategoricalGraphState;
use super::DiffusionError;

/// Inverse-CDF draw from a probability row.
pub(crate) fn sample_category<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>() * p.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > 0.0 {
            acc += v;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn check_step(t: usize, steps: usize, min: usize) -> Result<(), DiffusionError> {
    if t < min || t > steps {
        Err(DiffusionError::StepOutOfRange { t, steps })
    } else {
        Ok(())
    }
}

/// Marginal rows `x0·Q̄_t` of the forward process.
pub fn forward_probs(
    x0: &CategoricalGraphState,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<CategoricalGraphState, DiffusionError> {
    check_step(t, sched.steps(), 0)?;
    check_vocab(x0, sched)?;
    let mut out = x0.clone();
    let (qn, qe) = (sched.nodes.q_bar(t), sched.edges.q_bar(t));
    for i in 0..x0.n() {
        if x0.node_mask()[i] {
            out.set_node_probs(i, &qn.apply(x0.node_row(i)));
        }
        for j in i + 1..x0.n() {
            if x0.node_mask()[i] && x0.node_mask()[j] {
                out.set_edge_probs(i, j, &qe.apply(x0.edge_row(i, j)));
            }
        }
    }
    Ok(out)
}

fn check_vocab(x: &CategoricalGraphState, sched: &NoiseSchedule) -> Result<(), DiffusionError> {
    if x.k_node() != sched.nodes.k() || x.k_edge() != sched.edges.k() {
        return Err(DiffusionError::Shape(format!(
            "state vocabularies ({}, {}) vs schedule ({}, {})",
            x.k_node(),
            x.k_edge(),
            sched.nodes.k(),
            sched.edges.k()
        )));
    }
    Ok(())
}

/// Draws a one-hot `x_t` from `x0·Q̄_t`; masked nodes are left untouched and
/// edges are drawn on the upper triangle then mirrored.
pub fn forward_sample<R: Rng + ?Sized>(
    x0: &CategoricalGraphState,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<CategoricalGraphState, DiffusionError> {
    check_step(t, sched.steps(), 1)?;
    let probs = forward_probs(x0, t, sched)?;
    let mut out = x0.clone();
    for i in 0..x0.n() {
        if x0.node_mask()[i] {
            out.set_node(i, sample_category(probs.node_row(i), rng));
        }
    }
    for i in 0..x0.n() {
        for j in i + 1..x0.n() {
            if x0.node_mask()[i] && x0.node_mask()[j] {
                out.set_edge(i, j, sample_category(probs.edge_row(i, j), rng));
            }
        }
    }
    Ok(out)
}

/// `q(x_{t−1} | x_t, x0) ∝ (x_t·Q_tᵀ) ⊙ (x0·Q̄_{t−1})`, for `2 ≤ t ≤ T`.
pub fn posterior(
    x_t: &[f64],
    x0: &[f64],
    t: usize,
    ts: &TransitionSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    check_step(t, ts.len(), 2)?;
    let k = ts.k();
    if x_t.len() != k || x0.len() != k {
        return Err(DiffusionError::Shape(format!("rows of length {}, {} for K={k}", x_t.len(), x0.len())));
    }
    let a = likelihood(x_t, ts, t);
    let b = ts.q_bar(t - 1).apply(x0);
    let mut row: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a * b).collect();
    let z: f64 = row.iter().sum();
    if !(z > 0.0) {
        return Err(DiffusionError::ZeroNormalizer);
    }
    row.iter_mut().for_each(|v| *v /= z);
    Ok(row)
}

/// `(x_t·Q_tᵀ)_k = Σ_c x_t[c]·Q_t[k, c]`.
fn likelihood(x_t: &[f64], ts: &TransitionSchedule, t: usize) -> Vec<f64> {
    let q = ts.q(t);
    (0..ts.k())
        .map(|k| x_t.iter().enumerate().map(|(c, &x)| x * q.get(k, c)).sum())
        .collect()
}

/// Guided distribution `softmax((1 − s)·u + s·c)`, the same quantity as
/// `softmax(u + s·(c − u))` written so that `s = 0` and `s = 1` are exact.
pub fn cfg_combine(cond: &[f64], uncond: &[f64], s: f64) -> Result<Vec<f64>, DiffusionError> {
    if cond.len() != uncond.len() {
        return Err(DiffusionError::Shape(format!("{} vs {} logits", cond.len(), uncond.len())));
    }
    if !s.is_finite() || cond.iter().chain(uncond).any(|v| !v.is_finite()) {
        return Err(DiffusionError::NonFinite);
    }
    let mut row: Vec<f64> = if s == 1.0 {
        cond.to_vec()
    } else if s == 0.0 {
        uncond.to_vec()
    } else {
        cond.iter().zip(uncond).map(|(c, u)| (1.0 - s) * u + s * c).collect()
    };
    softmax_in_place(&mut row).map_err(|_| DiffusionError::NonFinite)?;
    Ok(row)
}

/// `p(x_{t−1}) = Σ_x̃ q(x_{t−1} | x_t, x̃)·p̂(x̃)`. Terms whose posterior has a
/// zero normalizer cannot have produced `x_t` and are skipped. At `t = 1` the
/// prediction itself is returned.
pub fn reverse_probs(
    x_t: &[f64],
    p_hat: &[f64],
    t: usize,
    ts: &TransitionSchedule,
) -> Result<Vec<f64>, DiffusionError> {
    check_step(t, ts.len(), 1)?;
    if t == 1 {
        return Ok(p_hat.to_vec());
    }
    let k = ts.k();
    let a = likelihood(x_t, ts, t);
    let prev = ts.q_bar(t - 1);
    let mut out = vec![0.0; k];
    for (j, &pj) in p_hat.iter().enumerate() {
        if pj == 0.0 {
            continue;
        }
        let b = prev.row(j);
        let z: f64 = a.iter().zip(b).map(|(a, b)| a * b).sum();
        if z > 0.0 {
            for ((o, a), b) in out.iter_mut().zip(&a).zip(b) {
                *o += pj * a * b / z;
            }
        }
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        return Err(DiffusionError::ZeroNormalizer);
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Clean-graph logits from a denoiser: `n×k_node` and `n×n×k_edge`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphLogits {
    pub nodes: Vec<f64>,
    pub edges: Vec<f64>,
}

fn guided(
    cond: &[f64],
    uncond: Option<&[f64]>,
    s: f64,
) -> Result<Vec<f64>, DiffusionError> {
    match uncond {
        Some(u) => cfg_combine(cond, u, s),
        None => cfg_combine(cond, cond, 1.0),
    }
}

/// One reverse transition. Without `uncond` the conditional logits are used
/// as is; with it, guidance of scale `s` is applied per node and per edge.
pub fn reverse_step<R: Rng + ?Sized>(
    x_t: &CategoricalGraphState,
    cond: &GraphLogits,
    uncond: Option<&GraphLogits>,
    t: usize,
    sched: &NoiseSchedule,
    s: f64,
    rng: &mut R,
) -> Result<CategoricalGraphState, DiffusionError> {
    check_step(t, sched.steps(), 1)?;
    check_vocab(x_t, sched)?;
    let (n, kn, ke) = (x_t.n(), x_t.k_node(), x_t.k_edge());
    let shapes_ok = |l: &GraphLogits| l.nodes.len() == n * kn && l.edges.len() == n * n * ke;
    if !shapes_ok(cond) || uncond.is_some_and(|u| !shapes_ok(u)) {
        return Err(DiffusionError::Shape("denoiser logits".into()));
    }
    let mask = x_t.node_mask();
    let mut out = x_t.clone();
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let r = i * kn..(i + 1) * kn;
        let p_hat = guided(&cond.nodes[r.clone()], uncond.map(|u| &u.nodes[r]), s)?;
        let p = reverse_probs(x_t.node_row(i), &p_hat, t, &sched.nodes)?;
        out.set_node(i, sample_category(&p, rng));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !(mask[i] && mask[j]) {
                continue;
            }
            let r = (i * n + j) * ke..(i * n + j + 1) * ke;
            let p_hat = guided(&cond.edges[r.clone()], uncond.map(|u| &u.edges[r]), s)?;
            let p = reverse_probs(x_t.edge_row(i, j), &p_hat, t, &sched.edges)?;
            out.set_edge(i, j, sample_category(&p, rng));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::{build_schedule, TransitionKind, TransitionMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_stochastic(k: usize, rng: &mut ChaCha8Rng) -> TransitionMatrix {
        let mut q = Vec::with_capacity(k * k);
        for _ in 0..k {
            let row: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = row.iter().sum();
            q.extend(row.iter().map(|v| v / s));
        }
        // Renormalize the last entry so rows sum to 1 within rounding.
        for r in 0..k {
            let s: f64 = q[r * k..r * k + k - 1].iter().sum();
            q[r * k + k - 1] = 1.0 - s;
        }
        TransitionMatrix::new(k, q).unwrap()
    }

    fn one_hot(k: usize, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; k];
        v[c] = 1.0;
        v
    }

    #[test]
    fn posterior_matches_bayes_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let k = rng.gen_range(2..=5);
            let steps = rng.gen_range(2..=4);
            let ts = TransitionSchedule::from_matrices(
                (0..steps).map(|_| random_stochastic(k, &mut rng)).collect(),
            )
            .unwrap();
            let t = rng.gen_range(2..=steps);
            let (c0, ct) = (rng.gen_range(0..k), rng.gen_range(0..k));
            let post = posterior(&one_hot(k, ct), &one_hot(k, c0), t, &ts).unwrap();
            // P(x_{t-1}=m | x_0, x_t) = Q̄_{t-1}[c0, m]·Q_t[m, ct] / Q̄_t[c0, ct]
            let z = ts.q_bar(t).get(c0, ct);
            for (m, p) in post.iter().enumerate() {
                let bayes = ts.q_bar(t - 1).get(c0, m) * ts.q(t).get(m, ct) / z;
                assert!((p - bayes).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn posterior_limits() {
        let id = TransitionSchedule::from_matrices(vec![TransitionMatrix::identity(3); 3]).unwrap();
        assert_eq!(posterior(&one_hot(3, 1), &one_hot(3, 1), 2, &id).unwrap(), one_hot(3, 1));
        assert_eq!(
            posterior(&one_hot(3, 1), &one_hot(3, 2), 2, &id),
            Err(DiffusionError::ZeroNormalizer)
        );
        let uni = TransitionMatrix::mixing(0.0, &[1.0 / 3.0; 3]);
        let mixed =
            TransitionSchedule::from_matrices(vec![uni, TransitionMatrix::identity(3)]).unwrap();
        let p = posterior(&one_hot(3, 2), &one_hot(3, 0), 2, &mixed).unwrap();
        assert!((p[2] - 1.0).abs() < 1e-12);
        assert!(matches!(
            posterior(&one_hot(3, 2), &one_hot(3, 0), 1, &mixed),
            Err(DiffusionError::StepOutOfRange { .. })
        ));
    }

    #[test]
    fn cfg_identities() {
        let c = [0.3, -1.2, 2.0];
        let u = [1.0, 0.0, -0.5];
        let sc = cfg_combine(&c, &c, 1.0).unwrap();
        assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), sc);
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), cfg_combine(&u, &u, 1.0).unwrap());
        // s = 3 on [0,1] / [1,0]: logits u + 3(c − u) = [−2, 3].
        let p = cfg_combine(&[0.0, 1.0], &[1.0, 0.0], 3.0).unwrap();
        let e = [(-2f64).exp(), 3f64.exp()];
        assert!((p[0] - e[0] / (e[0] + e[1])).abs() < 1e-15);
        assert_eq!(cfg_combine(&[f64::NAN, 0.0], &[0.0, 0.0], 1.0), Err(DiffusionError::NonFinite));
    }

    #[test]
    fn reverse_mixture_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ts = TransitionSchedule::from_matrices(
            (0..3).map(|_| random_stochastic(2, &mut rng)).collect(),
        )
        .unwrap();
        let p_hat = [0.3, 0.7];
        for xt in 0..2 {
            let got = reverse_probs(&one_hot(2, xt), &p_hat, 3, &ts).unwrap();
            let mut want = [0.0; 2];
            for (x0, &w) in p_hat.iter().enumerate() {
                let post = posterior(&one_hot(2, xt), &one_hot(2, x0), 3, &ts).unwrap();
                want[0] += w * post[0];
                want[1] += w * post[1];
            }
            assert!((got[0] - want[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn certain_denoiser_recovers_x0_under_identity() {
        let x0 = CategoricalGraphState::one_hot(
            &[1, 0, 2],
            &[0, 1, 0, 1, 0, 3, 0, 3, 0],
            vec![true; 3],
            3,
            4,
        )
        .unwrap();
        let sched = NoiseSchedule::from_matrices(
            vec![TransitionMatrix::identity(3); 2],
            vec![TransitionMatrix::identity(4); 2],
        )
        .unwrap();
        let logits = GraphLogits {
            nodes: x0.node_probs().iter().map(|&p| if p > 0.0 { 0.0 } else { -40.0 }).collect(),
            edges: x0.edge_probs().iter().map(|&p| if p > 0.0 { 0.0 } else { -40.0 }).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x1 = reverse_step(&x0, &logits, None, 2, &sched, 1.0, &mut rng).unwrap();
        assert_eq!(x1, x0);
    }

    #[test]
    fn forward_identity_and_symmetry() {
        let sched = build_schedule(10, TransitionKind::Uniform, 3, 3).unwrap();
        let x0 = CategoricalGraphState::one_hot(
            &[0, 1, 2, 1],
            &[0; 16],
            vec![true, true, true, false],
            3,
            3,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in 1..=10 {
            let xt = forward_sample(&x0, t, &sched, &mut rng).unwrap();
            xt.check(1e-12).unwrap();
            assert_eq!(xt.node_row(3), x0.node_row(3));
        }
        let id = NoiseSchedule::from_matrices(
            vec![TransitionMatrix::identity(3)],
            vec![TransitionMatrix::identity(3)],
        )
        .unwrap();
        assert_eq!(forward_sample(&x0, 1, &id, &mut rng).unwrap(), x0);
        assert!(forward_sample(&x0, 11, &sched, &mut rng).is_err());
    }
}

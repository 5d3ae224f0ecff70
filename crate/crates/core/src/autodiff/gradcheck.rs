use super::{AdError, Tape, Tensor, Var};

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    /// Largest `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// The point sits within `h` of a non-differentiable kink.
    pub excluded: bool,
    pub passed: bool,
}

fn eval<F>(f: &F, x: &Tensor, margin: f64) -> Result<(f64, bool), AdError>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>, AdError>,
{
    let tape = Tape::no_grad();
    tape.set_kink_margin(margin);
    let v = f(tape.constant(x.clone()))?;
    let y = v.item();
    if !y.is_finite() {
        return Err(AdError::NonFinite);
    }
    Ok((y, tape.kink_hit()))
}

/// Checks every coordinate of `point`.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64, tol: f64) -> Result<GradReport, AdError>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>, AdError>,
{
    let coords: Vec<usize> = (0..point.numel()).collect();
    grad_check_coords(f, point, h, tol, &coords)
}

/// Checks only the listed coordinates; useful when inputs are wide and each
/// finite difference costs a full forward pass.
pub fn grad_check_coords<F>(
    f: F,
    point: &Tensor,
    h: f64,
    tol: f64,
    coords: &[usize],
) -> Result<GradReport, AdError>
where
    F: for<'t> Fn(Var<'t>) -> Result<Var<'t>, AdError>,
{
    if !(h > 0.0) || !point.is_finite() {
        return Err(AdError::NonFinite);
    }
    let tape = Tape::new();
    tape.set_kink_margin(h);
    let x = tape.leaf(point.clone())?;
    let y = f(x)?;
    if !y.item().is_finite() {
        return Err(AdError::NonFinite);
    }
    let mut excluded = tape.kink_hit();
    let analytic = tape.backward(y)?.wrt(x);

    let mut max_rel: f64 = 0.0;
    for &c in coords {
        let mut plus = point.clone();
        plus.data_mut()[c] += h;
        let mut minus = point.clone();
        minus.data_mut()[c] -= h;
        let (fp, kp) = eval(&f, &plus, 0.0)?;
        let (fm, km) = eval(&f, &minus, 0.0)?;
        excluded |= kp || km;
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[c];
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        max_rel = max_rel.max(rel);
    }
    Ok(GradReport {
        max_rel_error: max_rel,
        checked: coords.len(),
        excluded,
        passed: !excluded && max_rel < tol,
    })
}

//! Finite-difference utilities used by the gradient test suites.

/// Central finite-difference gradient of a scalar function of a flat buffer.
/// Only the entries listed in `indices` are probed.
pub fn central_diff(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    indices: &[usize],
    step: f64,
) -> Vec<f64> {
    let mut buf = x.to_vec();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = buf[i];
        buf[i] = orig + step;
        let fp = f(&buf);
        buf[i] = orig - step;
        let fm = f(&buf);
        buf[i] = orig;
        out.push((fp - fm) / (2.0 * step));
    }
    out
}

/// Richardson-extrapolated central difference: combines steps `h` and `h/2`
/// as `(4·D(h/2) − D(h)) / 3`, cancelling the O(h²) truncation term. Use when
/// a plain central difference is not accurate enough to resolve a tight
/// tolerance on a smooth function.
pub fn richardson_diff(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    indices: &[usize],
    step: f64,
) -> Vec<f64> {
    let d1 = central_diff(&mut f, x, indices, step);
    let d2 = central_diff(&mut f, x, indices, step / 2.0);
    d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect()
}

/// Relative error with an absolute floor, so near-zero gradients do not blow
/// the ratio up on pure roundoff.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-4);
    (a - b).abs() / denom
}

/// Max relative error between an analytic gradient and central differences
/// at the probed indices.
pub fn max_grad_rel_err(
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
) -> f64 {
    let fd = central_diff(f, x, indices, step);
    indices
        .iter()
        .zip(&fd)
        .map(|(&i, &fdv)| rel_err(analytic[i], fdv))
        .fold(0.0, f64::max)
}

/// [`max_grad_rel_err`] with the Richardson-extrapolated difference.
pub fn max_grad_rel_err_rich(
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
) -> f64 {
    let fd = richardson_diff(f, x, indices, step);
    indices
        .iter()
        .zip(&fd)
        .map(|(&i, &fdv)| rel_err(analytic[i], fdv))
        .fold(0.0, f64::max)
}

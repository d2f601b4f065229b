//! Central-finite-difference utilities used to verify analytic gradients.

/// Central difference of `f` along coordinate `i` of `theta`.
pub fn central_diff<F>(theta: &mut [f64], i: usize, h: f64, mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = theta[i];
    theta[i] = orig + h;
    let plus = f(theta);
    theta[i] = orig - h;
    let minus = f(theta);
    theta[i] = orig;
    (plus - minus) / (2.0 * h)
}

/// Relative error between a finite-difference estimate and an analytic value,
/// with a floor so near-zero pairs compare absolutely.
pub fn rel_err(fd: f64, analytic: f64, floor: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(floor)
}

/// Deterministically spread `count` probe indices over `len` coordinates.
pub fn probe_indices(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    (0..count).map(|i| i * len / count).collect()
}

//! Central finite-difference gradient checking.
//!
//! The numeric side re-evaluates the loss as a black box, so it is
//! independent of the reverse-mode path it verifies.

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn central_diff<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut buf = x.to_vec();
    for i in 0..x.len() {
        let orig = buf[i];
        buf[i] = orig + h;
        let fp = f(&buf);
        buf[i] = orig - h;
        let fm = f(&buf);
        buf[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Largest relative error between analytic and numeric gradients. The
/// denominator is floored to keep near-zero entries from exploding the ratio.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Convention used by every gradient check in this crate:
/// h = 1e-5, denominator floor = 1e-5, pass when below 1e-4.
pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

//! Central finite-difference gradient oracle.
//!
//! Runs the forward function twice per coordinate in 64-bit; entirely
//! independent of the tape's backward pass. Used by the test suites to
//! validate every differentiable operation and the full transformer block.

/// Numerical gradient of `f` at `x` by central differences.
pub fn central_diff_grad<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xs = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xs[i];
        xs[i] = orig + step;
        let fp = f(&xs);
        xs[i] = orig - step;
        let fm = f(&xs);
        xs[i] = orig;
        grad[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Worst relative error between analytic and numeric gradients.
///
/// Components below `floor` in both gradients compare in absolute terms
/// (the central-difference noise floor at step 1e-4 sits near 1e-8, so the
/// default floor of 1e-3 keeps the comparison honest for tiny components).
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let denom = a.abs().max(n.abs()).max(floor);
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}

/// Convenience wrapper: checks `analytic` against central differences of `f`
/// and returns the worst relative error.
pub fn check<F>(f: F, x: &[f64], analytic: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = central_diff_grad(f, x, step);
    max_rel_err(analytic, &numeric, 1e-3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let x = [1.0, -2.0, 0.5];
        let g = central_diff_grad(f, &x, 1e-5);
        let expect = [2.0, -4.0, 1.0];
        assert!(max_rel_err(&expect, &g, 1e-3) < 1e-8);
    }
}

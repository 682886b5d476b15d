//! Central finite-difference gradient checking.

/// Compare an analytic gradient against central finite differences.
///
/// `value` evaluates the scalar function at a point; `grad` returns its
/// analytic gradient there. Both must be deterministic (freeze any noise
/// before building the closures). Returns the worst relative error over
/// all coordinates, with the denominator `max(|analytic|, |numeric|, 1e-8)`
/// so that near-zero gradients are compared absolutely.
pub fn grad_check(
    value: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    point: &[f64],
    epsilon: f64,
) -> f64 {
    assert!(epsilon > 0.0);
    let analytic = grad(point);
    assert_eq!(analytic.len(), point.len(), "gradient length mismatch");
    let mut worst: f64 = 0.0;
    let mut buf = point.to_vec();
    for i in 0..point.len() {
        let orig = buf[i];
        buf[i] = orig + epsilon;
        let fp = value(&buf);
        buf[i] = orig - epsilon;
        let fm = value(&buf);
        buf[i] = orig;
        let numeric = (fp - fm) / (2.0 * epsilon);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_checks_clean() {
        // f(x) = x^2 at x = 2
        let err = grad_check(|x| x[0] * x[0], |x| vec![2.0 * x[0]], &[2.0], 1e-5);
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn broken_gradient_is_caught() {
        // deliberately wrong by 10%
        let err = grad_check(|x| x[0] * x[0], |x| vec![2.2 * x[0]], &[2.0], 1e-5);
        assert!(err > 1e-2, "negative control failed: err {err}");
    }

    #[test]
    fn multivariate_polynomial() {
        let f = |x: &[f64]| x[0] * x[0] * x[1] + 3.0 * x[1];
        let g = |x: &[f64]| vec![2.0 * x[0] * x[1], x[0] * x[0] + 3.0];
        let err = grad_check(f, g, &[1.3, -0.7], 1e-5);
        assert!(err < 1e-8);
    }
}

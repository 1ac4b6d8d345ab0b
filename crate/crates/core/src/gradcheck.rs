//! Central finite differences for checking analytic gradients.

use crate::matrix::Matrix;

/// Numerical gradient of `f` at `x`: `(f(x + h·e_k) - f(x - h·e_k)) / 2h`
/// for every entry `k`.
pub fn central_difference<F>(x: &Matrix, step: f64, mut f: F) -> Matrix
where
    F: FnMut(&Matrix) -> f64,
{
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for k in 0..x.as_slice().len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let plus = f(&probe);
        probe.as_mut_slice()[k] = orig - step;
        let minus = f(&probe);
        probe.as_mut_slice()[k] = orig;
        grad.as_mut_slice()[k] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Largest entrywise deviation, relative to the larger of the two
/// gradients' max-norms: `max_k |a_k - b_k| / max(‖a‖∞, ‖b‖∞)`.
///
/// Two all-zero gradients have error 0.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let scale = analytic.max_abs().max(numeric.max_abs());
    if scale == 0.0 {
        return 0.0;
    }
    analytic.max_abs_diff(numeric) / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        let g = central_difference(&x, 1e-5, |m| m.as_slice().iter().map(|v| v * v).sum());
        let expect = x.scaled(2.0);
        assert!(max_relative_error(&g, &expect) < 1e-9);
    }

    #[test]
    fn zero_gradients() {
        let z = Matrix::zeros(2, 2);
        assert_eq!(max_relative_error(&z, &z), 0.0);
    }
}

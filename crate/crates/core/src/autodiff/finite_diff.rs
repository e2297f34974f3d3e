use super::GradError;

/// Central-difference gradient oracle: `(f(x + h e_i) - f(x - h e_i)) / 2h`
/// per coordinate. Independent of the reverse-mode path it validates.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>, GradError>
where
    F: FnMut(&[f64]) -> Result<f64, GradError>,
{
    if h <= 0.0 {
        return Err(GradError::BadTensor {
            detail: format!("finite-difference step must be positive, got {h}"),
        });
    }
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe)?;
        probe[i] = x[i] - h;
        let minus = f(&probe)?;
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(GradError::BadTensor {
                detail: format!("non-finite function value near coordinate {i}"),
            });
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Relative error used by every gradient check in this crate.
///
/// The `1e-4` floor makes comparisons meaningful for near-zero components,
/// where the h=1e-5 central difference carries ~1e-10 of absolute noise.
pub fn grad_rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient() {
        let f = |x: &[f64]| Ok(x.iter().map(|v| v * v).sum());
        let g = finite_diff_grad(f, &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let f = |_: &[f64]| Ok(42.0);
        let g = finite_diff_grad(f, &[0.3, -0.7, 5.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let f = |_: &[f64]| Ok(0.0);
        assert!(finite_diff_grad(f, &[1.0], 0.0).is_err());
    }

    #[test]
    fn non_finite_evaluation_propagates() {
        let f = |x: &[f64]| {
            if x[0] > 1.0 {
                Ok(f64::INFINITY)
            } else {
                Ok(x[0])
            }
        };
        assert!(finite_diff_grad(f, &[1.0], 1e-5).is_err());
    }
}

//! Brute-force reference implementations for validating closed-form algebra.
//!
//! Everything in this crate trades efficiency for transparency: dense
//! matrices, textbook formulas, no factorization tricks. The main library
//! must agree with these on small instances; the oracles themselves are kept
//! small enough (dimensions of a handful) to be correct by inspection.

use nalgebra::{DMatrix, DVector};

/// A named expected-value check with an explicit tolerance.
///
/// Test suites register one case per derived expected value so that the
/// provenance of every asserted number is visible at the assertion site.
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub description: &'static str,
    pub oracle: &'static str,
    pub tolerance: f64,
}

impl OracleCase {
    pub fn new(description: &'static str, oracle: &'static str, tolerance: f64) -> Self {
        Self {
            description,
            oracle,
            tolerance,
        }
    }

    /// Assert that `actual` matches `expected` within the case tolerance.
    ///
    /// # Panics
    /// Panics with the case description when the deviation exceeds tolerance.
    pub fn check(&self, actual: f64, expected: f64) {
        let dev = (actual - expected).abs();
        assert!(
            dev <= self.tolerance,
            "[{} / oracle {}] |{actual} - {expected}| = {dev} > {}",
            self.description,
            self.oracle,
            self.tolerance
        );
    }

    /// Elementwise check for vector quantities.
    pub fn check_slice(&self, actual: &[f64], expected: &[f64]) {
        assert_eq!(
            actual.len(),
            expected.len(),
            "[{}] length mismatch",
            self.description
        );
        for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
            let dev = (a - e).abs();
            assert!(
                dev <= self.tolerance,
                "[{} / oracle {}] entry {i}: |{a} - {e}| = {dev} > {}",
                self.description,
                self.oracle,
                self.tolerance
            );
        }
    }
}

/// Condition a joint Gaussian on an observed subvector, by the book.
///
/// Given `N(mean, cov)` over indices `0..n`, the `observed` index/value pairs
/// select the conditioning block; the return value is the conditional mean
/// and covariance over the remaining indices, in their original order.
///
/// Uses the partitioned formulas
/// `mean_a + C_ab C_bb^{-1} (x_b - mean_b)` and
/// `C_aa - C_ab C_bb^{-1} C_ba`
/// with an explicit inverse, cross-checked against an LU solve.
pub fn gaussian_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    observed: &[(usize, f64)],
) -> Result<(DVector<f64>, DMatrix<f64>), String> {
    let n = mean.len();
    assert_eq!(cov.nrows(), n);
    assert_eq!(cov.ncols(), n);
    for &(idx, _) in observed {
        assert!(idx < n, "observed index {idx} out of range");
    }
    let obs_idx: Vec<usize> = observed.iter().map(|&(i, _)| i).collect();
    let free_idx: Vec<usize> = (0..n).filter(|i| !obs_idx.contains(i)).collect();
    let na = free_idx.len();
    let nb = obs_idx.len();

    if nb == 0 {
        return Ok((mean.clone(), cov.clone()));
    }

    let c_aa = DMatrix::from_fn(na, na, |i, j| cov[(free_idx[i], free_idx[j])]);
    let c_ab = DMatrix::from_fn(na, nb, |i, j| cov[(free_idx[i], obs_idx[j])]);
    let c_bb = DMatrix::from_fn(nb, nb, |i, j| cov[(obs_idx[i], obs_idx[j])]);
    let mean_a = DVector::from_fn(na, |i, _| mean[free_idx[i]]);
    let mean_b = DVector::from_fn(nb, |i, _| mean[obs_idx[i]]);
    let x_b = DVector::from_fn(nb, |i, _| observed[i].1);

    let c_bb_inv = c_bb
        .clone()
        .try_inverse()
        .ok_or_else(|| "singular observed block".to_string())?;

    // Dual-path self check: explicit inverse vs LU solve of the same system.
    let resid = (&x_b - &mean_b).clone();
    let via_inverse = &c_bb_inv * &resid;
    let via_solve = c_bb
        .clone()
        .lu()
        .solve(&resid)
        .ok_or_else(|| "singular observed block".to_string())?;
    let path_dev = (&via_inverse - &via_solve).amax();
    if path_dev > 1e-8 {
        return Err(format!(
            "inverse/solve paths disagree by {path_dev}; observed block too ill-conditioned"
        ));
    }

    let cond_mean = &mean_a + &c_ab * via_inverse;
    let cond_cov = &c_aa - &c_ab * &c_bb_inv * c_ab.transpose();
    Ok((cond_mean, cond_cov))
}

/// Central-difference gradient estimate of `f` at `point`.
pub fn finite_difference_gradient<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(step > 0.0, "step must be positive");
    let mut grad = vec![0.0; point.len()];
    let mut x = point.to_vec();
    for i in 0..point.len() {
        x[i] = point[i] + step;
        let fp = f(&x);
        x[i] = point[i] - step;
        let fm = f(&x);
        x[i] = point[i];
        grad[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn conditioning_on_independent_block_is_marginal() {
        let mean = vec2(1.0, -2.0);
        let cov = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 5.0]);
        let (m, c) = gaussian_condition(&mean, &cov, &[(1, 4.0)]).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-14);
        assert!((c[(0, 0)] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn perfect_correlation_gives_zero_conditional_variance() {
        let mean = vec2(0.0, 0.0);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (m, c) = gaussian_condition(&mean, &cov, &[(1, 2.5)]).unwrap();
        assert!((m[0] - 2.5).abs() < 1e-12);
        assert!(c[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn five_dim_random_psd_case_dual_path_agrees() {
        // Deterministic pseudo-random PSD matrix: A = B B' + I.
        let b = DMatrix::from_fn(5, 5, |i, j| ((i * 7 + j * 13 + 3) % 11) as f64 / 11.0 - 0.4);
        let cov = &b * b.transpose() + DMatrix::identity(5, 5);
        let mean = DVector::from_fn(5, |i, _| i as f64 * 0.3 - 0.7);
        let observed = [(1, 0.8), (3, -0.2)];
        // gaussian_condition errors if its two internal paths disagree beyond
        // 1e-8; tighten the check here by re-deriving the mean a second way.
        let (m, c) = gaussian_condition(&mean, &cov, &observed).unwrap();

        // Second independent path: condition sequentially one observation at
        // a time; Gaussian conditioning is associative.
        let (m1, c1) = gaussian_condition(&mean, &cov, &[(1, 0.8)]).unwrap();
        // After removing index 1, original index 3 sits at position 2.
        let (m2, c2) = gaussian_condition(&m1, &c1, &[(2, -0.2)]).unwrap();
        for i in 0..3 {
            assert!((m[i] - m2[i]).abs() < 1e-12, "mean entry {i}");
            for j in 0..3 {
                assert!((c[(i, j)] - c2[(i, j)]).abs() < 1e-12, "cov entry {i},{j}");
            }
        }
    }

    #[test]
    fn singular_observed_block_errors() {
        let mean = DVector::zeros(3);
        let mut cov = DMatrix::identity(3, 3);
        cov[(1, 1)] = 0.0;
        assert!(gaussian_condition(&mean, &cov, &[(1, 1.0)]).is_err());
    }

    #[test]
    fn central_difference_of_square_at_three() {
        let g = finite_difference_gradient(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn central_difference_exact_for_linear() {
        let g = finite_difference_gradient(|x| 2.0 * x[0] - 5.0 * x[1], &[0.3, -1.2], 0.5);
        assert!((g[0] - 2.0).abs() < 1e-12);
        assert!((g[1] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn central_difference_matches_quadratic_form_gradient() {
        // f(x) = x' A x with symmetric A has gradient 2 A x.
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, -0.3, 0.1, -0.3, 1.0]);
        let x = [0.7, -0.4, 1.1];
        let f = |v: &[f64]| {
            let v = DVector::from_column_slice(v);
            (v.transpose() * &a * &v)[(0, 0)]
        };
        let g = finite_difference_gradient(f, &x, 1e-5);
        let expect = 2.0 * &a * DVector::from_column_slice(&x);
        let case = OracleCase::new(
            "quadratic form gradient",
            "finite_difference_gradient",
            1e-8,
        );
        case.check_slice(&g, expect.as_slice());
    }
}

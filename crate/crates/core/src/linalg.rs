//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

/// Largest singular value of `a` by power iteration on `aᵀa`.
///
/// Power iteration approaches `‖a‖₂` from below. The start vector is fixed so
/// the estimate is deterministic.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    // A fixed, non-symmetric start avoids being orthogonal to the top singular
    // vector for structured matrices (e.g. the all-ones direction).
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 97) as f64 / 97.0);
    v /= v.norm();
    let mut sigma = 0.0;
    let mut av = DVector::zeros(a.nrows());
    let mut w = DVector::zeros(n);
    for _ in 0..1000 {
        av.gemv(1.0, a, &v, 0.0);
        w.gemv_tr(1.0, a, &av, 0.0);
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        let next = wn.sqrt();
        v.copy_from(&w);
        v /= wn;
        let converged = (next - sigma).abs() <= 1e-12 * next;
        sigma = next;
        if converged {
            break;
        }
    }
    sigma
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_zero() {
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(&[3.0, -5.0, 1.0]));
        assert!((spectral_norm(&a) - 5.0).abs() < 1e-9);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 2)), 0.0);
    }

    #[test]
    fn matches_svd() {
        let a = DMatrix::from_fn(6, 4, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let exact = a.clone().svd(false, false).singular_values.max();
        assert!((spectral_norm(&a) - exact).abs() <= 1e-8 * exact);
    }
}

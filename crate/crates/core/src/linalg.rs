//! Small dense linear-algebra helpers shared by the model and the solver.

use nalgebra::{DMatrix, DVector};

/// Condition number above which a solve is reported as degenerate.
pub const MAX_CONDITION: f64 = 1e12;

/// Replace `m` by `(m + mᵀ) / 2` in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// Maximum absolute column sum.
pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse of a square matrix together with its 1-norm condition number.
///
/// Returns `Err(condition)` when the matrix is singular, non-finite, or its
/// condition number exceeds `MAX_CONDITION`.
pub fn checked_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let inv = match m.clone().lu().try_inverse() {
        Some(inv) => inv,
        None => return Err(f64::INFINITY),
    };
    let cond = norm1(m) * norm1(&inv);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(cond);
    }
    Ok(inv)
}

/// `log|det(m)|` and the sign of the determinant, via LU.
pub fn log_abs_det(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (1.0, 0.0);
    }
    let lu = m.clone().lu();
    let u = lu.u();
    let mut sign = 1.0;
    let mut logabs = 0.0;
    for i in 0..u.nrows() {
        let v = u[(i, i)];
        if v < 0.0 {
            sign = -sign;
        }
        logabs += v.abs().ln();
    }
    sign *= lu.p().determinant::<f64>();
    (sign, logabs)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest relative deviation from symmetry, `max|m - mᵀ| / max(1, max|m|)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() / scale
}

/// `max|a - b| / max(max|b|, tiny)`, the relative error used throughout the tests.
pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.amax().max(f64::MIN_POSITIVE);
    (a - b).amax() / scale
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = b.amax().max(f64::MIN_POSITIVE);
    (a - b).amax() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_sign_tracks_permutation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let (sign, logabs) = log_abs_det(&m);
        assert_eq!(sign, -1.0);
        assert!(logabs.abs() < 1e-15);

        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let (sign, logabs) = log_abs_det(&m);
        assert_eq!(sign, 1.0);
        assert!((logabs - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn checked_inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(checked_inverse(&m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]);
        assert!(checked_inverse(&m).is_err());
    }
}

use nalgebra::{DMatrix, DVector};

use crate::error::{BsblError, Result};
use crate::model::MeasurementSystem;
use crate::partition::BlockPartition;
use crate::solver::{solve, RecoveryResult, SolverOptions};

/// Orthonormal inverse-DCT synthesis matrix `D`, so that `x = Dθ` and `θ = Dᵀx`.
///
/// Column `k` is the k-th DCT-II basis vector
/// `c_k cos(π(2n + 1)k / 2N)` with `c_0 = √(1/N)` and `c_k = √(2/N)`.
pub fn dct_basis(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(BsblError::InvalidSpec("DCT size must be at least 1".into()));
    }
    let nf = n as f64;
    let c0 = (1.0 / nf).sqrt();
    let ck = (2.0 / nf).sqrt();
    Ok(DMatrix::from_fn(n, n, |row, k| {
        let c = if k == 0 { c0 } else { ck };
        c * (std::f64::consts::PI * (2 * row + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    }))
}

/// Recover `x = Dθ` from `y = ΦDθ`: solve for the coefficients `θ` on the
/// composed dictionary, then synthesize.
pub fn recover_transform_domain(
    y: &DVector<f64>,
    phi: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    partition: &BlockPartition,
    options: &SolverOptions,
) -> Result<(DVector<f64>, RecoveryResult)> {
    if phi.ncols() != basis.nrows() || !basis.is_square() {
        return Err(BsblError::DimensionMismatch(format!(
            "sensing matrix {}x{} cannot be composed with basis {}x{}",
            phi.nrows(),
            phi.ncols(),
            basis.nrows(),
            basis.ncols()
        )));
    }
    let system = MeasurementSystem::new(phi * basis, y.clone(), 1.0)?;
    let result = solve(&system, partition, options)?;
    Ok((basis * &result.x, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{gen_gaussian_matrix, generators::rng_for};
    use rand::Rng;

    #[test]
    fn single_point_basis() {
        assert_eq!(dct_basis(1).unwrap(), DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn basis_is_orthonormal() {
        let d = dct_basis(64).unwrap();
        let gram = d.transpose() * &d;
        assert!((gram - DMatrix::identity(64, 64)).amax() <= 1e-10);
    }

    #[test]
    fn analysis_synthesis_round_trip() {
        let d = dct_basis(512).unwrap();
        let mut rng = rng_for(8);
        let x = DVector::from_fn(512, |_, _| rng.random_range(-1.0..1.0));
        let theta = d.tr_mul(&x);
        assert!((&d * theta - &x).amax() <= 1e-10);
    }

    #[test]
    fn identity_basis_matches_plain_solve() {
        let phi = gen_gaussian_matrix(20, 40, 3);
        let mut x = DVector::zeros(40);
        x.rows_mut(8, 8).fill(1.0);
        let y = &phi * &x;
        let part = BlockPartition::uniform(5, 8).unwrap();
        let opts = SolverOptions::default();
        let (xt, _) =
            recover_transform_domain(&y, &phi, &DMatrix::identity(40, 40), &part, &opts).unwrap();
        let plain = solve(&MeasurementSystem::new(phi, y, 1.0).unwrap(), &part, &opts).unwrap();
        assert_eq!(xt, plain.x);
    }
}

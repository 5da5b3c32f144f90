//! Probabilistic model for block-sparse signals.
//!
//! Each block `x_i` carries a zero-mean Gaussian prior with covariance `A_i`,
//! the observations are `y = Φx + n` with white noise of precision `β`, and
//! the type-II cost is `L = log|C| + yᵀC⁻¹y` with `C = β⁻¹I + Σ Φ_i A_i Φ_iᵀ`.
//!
//! The functions here evaluate posterior and cost directly (dense, from
//! scratch). They are the reference the incremental solver is checked against.

mod state;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{BsblError, Result};
use crate::linalg::{self, checked_inverse, log_abs_det, min_eigenvalue, symmetrized};
use crate::partition::BlockPartition;

pub use state::{BlockStats, CacheDiscrepancy, ModelState};

/// Active block covariances keyed by block index.
pub type ActiveCovariances = BTreeMap<usize, BlockCovariance>;

/// Sensing matrix, observation and noise precision.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSystem {
    phi: DMatrix<f64>,
    y: DVector<f64>,
    beta: f64,
}

impl MeasurementSystem {
    pub fn new(phi: DMatrix<f64>, y: DVector<f64>, beta: f64) -> Result<Self> {
        if phi.nrows() != y.len() {
            return Err(BsblError::DimensionMismatch(format!(
                "sensing matrix has {} rows but observation has length {}",
                phi.nrows(),
                y.len()
            )));
        }
        if phi.nrows() == 0 || phi.ncols() == 0 {
            return Err(BsblError::DimensionMismatch("empty sensing matrix".into()));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(BsblError::InvalidPrecision(beta));
        }
        Ok(Self { phi, y, beta })
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Number of measurements M.
    pub fn m(&self) -> usize {
        self.phi.nrows()
    }

    /// Signal length N.
    pub fn n(&self) -> usize {
        self.phi.ncols()
    }

    /// More measurements than unknowns. Allowed, but outside the usual regime.
    pub fn is_overdetermined(&self) -> bool {
        self.m() > self.n()
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.phi.clone(), self.y.clone(), beta)
    }

    pub(crate) fn check_partition(&self, partition: &BlockPartition) -> Result<()> {
        if partition.len() != self.n() {
            return Err(BsblError::DimensionMismatch(format!(
                "partition covers {} coefficients but sensing matrix has {} columns",
                partition.len(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// Prior covariance `A_i` of one block, with relevance `γ_i = Tr(A_i)/d_i`
/// and correlation template `B_i = A_i/γ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCovariance {
    a: DMatrix<f64>,
    gamma: f64,
    b: DMatrix<f64>,
    r: Option<f64>,
}

impl BlockCovariance {
    /// Wrap a general symmetric positive definite covariance.
    ///
    /// Rejects matrices that are asymmetric beyond relative tolerance 1e-10 or
    /// whose smallest eigenvalue is below `1e-12 · trace`.
    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d {
            return Err(BsblError::InvalidCovariance(format!(
                "expected a non-empty square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(BsblError::InvalidCovariance("non-finite entry".into()));
        }
        if linalg::asymmetry(&a) > 1e-10 {
            return Err(BsblError::InvalidCovariance(
                "matrix is not symmetric".into(),
            ));
        }
        let a = symmetrized(a);
        let trace = a.trace();
        let min_eig = min_eigenvalue(&a);
        if trace <= 0.0 || min_eig < 1e-12 * trace {
            return Err(BsblError::DegeneratePrior {
                block: None,
                reason: format!("smallest eigenvalue {min_eig:e} against trace {trace:e}"),
            });
        }
        let gamma = trace / d as f64;
        let b = &a / gamma;
        Ok(Self {
            a,
            gamma,
            b,
            r: None,
        })
    }

    /// `γ · B` for a unit-diagonal positive definite template `B`.
    pub fn structured(gamma: f64, b: DMatrix<f64>, r: Option<f64>) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(BsblError::NotRelevant { gamma });
        }
        let d = b.nrows();
        if d == 0 || b.ncols() != d {
            return Err(BsblError::InvalidCovariance(
                "template must be square".into(),
            ));
        }
        if b.diagonal().iter().any(|v| *v != 1.0) {
            return Err(BsblError::InvalidCovariance(
                "template diagonal must be 1".into(),
            ));
        }
        if b.clone().cholesky().is_none() {
            return Err(BsblError::DegeneratePrior {
                block: None,
                reason: "correlation template is not positive definite".into(),
            });
        }
        let b = symmetrized(b);
        let a = &b * gamma;
        Ok(Self { a, gamma, b, r })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// AR(1) coefficient, present only for the AR correlation models.
    pub fn r(&self) -> Option<f64> {
        self.r
    }
}

/// Gaussian posterior over the coefficients of the active blocks.
///
/// Rows of `mu` and `sigma` follow `active` (ascending block index), each
/// block contributing `d_i` consecutive entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub active: Vec<usize>,
}

impl Posterior {
    pub fn empty() -> Self {
        Self {
            mu: DVector::zeros(0),
            sigma: DMatrix::zeros(0, 0),
            active: Vec::new(),
        }
    }

    /// Scatter the posterior mean into a full-length vector.
    pub fn embed(&self, partition: &BlockPartition) -> DVector<f64> {
        let mut x = DVector::zeros(partition.len());
        let mut pos = 0;
        for &b in &self.active {
            let d = partition.size(b);
            x.rows_mut(partition.offset(b), d)
                .copy_from(&self.mu.rows(pos, d));
            pos += d;
        }
        x
    }
}

/// Columns of `phi` belonging to `blocks`, in the given order.
pub fn block_columns(
    phi: &DMatrix<f64>,
    partition: &BlockPartition,
    blocks: &[usize],
) -> DMatrix<f64> {
    let k: usize = blocks.iter().map(|&b| partition.size(b)).sum();
    let mut out = DMatrix::zeros(phi.nrows(), k);
    let mut pos = 0;
    for &b in blocks {
        let d = partition.size(b);
        out.columns_mut(pos, d)
            .copy_from(&phi.columns(partition.offset(b), d));
        pos += d;
    }
    out
}

fn check_covs(partition: &BlockPartition, covs: &ActiveCovariances) -> Result<()> {
    for (&i, cov) in covs {
        if i >= partition.num_blocks() {
            return Err(BsblError::InvalidPartition(format!(
                "active block {i} outside partition of {} blocks",
                partition.num_blocks()
            )));
        }
        if cov.dim() != partition.size(i) {
            return Err(BsblError::DimensionMismatch(format!(
                "block {i} has size {} but covariance is {}x{}",
                partition.size(i),
                cov.dim(),
                cov.dim()
            )));
        }
    }
    Ok(())
}

/// Posterior `Σ = (Γ⁻¹ + βΦᵀΦ)⁻¹`, `μ = βΣΦᵀy` over the active columns.
pub fn compute_posterior(
    system: &MeasurementSystem,
    partition: &BlockPartition,
    covs: &ActiveCovariances,
) -> Result<Posterior> {
    system.check_partition(partition)?;
    check_covs(partition, covs)?;
    if covs.is_empty() {
        return Ok(Posterior::empty());
    }
    let active: Vec<usize> = covs.keys().copied().collect();
    let phi_a = block_columns(system.phi(), partition, &active);
    let beta = system.beta();

    let mut precision = phi_a.tr_mul(&phi_a) * beta;
    let mut pos = 0;
    for (&i, cov) in covs {
        let d = cov.dim();
        let a_inv = checked_inverse(cov.a()).map_err(|condition| BsblError::DegeneratePrior {
            block: Some(i),
            reason: format!("prior covariance not invertible (condition {condition:e})"),
        })?;
        let mut view = precision.view_mut((pos, pos), (d, d));
        view += a_inv;
        pos += d;
    }
    let precision = symmetrized(precision);
    let sigma = match precision.clone().cholesky() {
        Some(chol) => symmetrized(chol.inverse()),
        None => {
            return Err(BsblError::NumericalDegeneracy {
                context: "posterior precision".into(),
                condition: condition_sym(&precision),
            })
        }
    };
    let mu = &sigma * (phi_a.tr_mul(system.y()) * beta);
    Ok(Posterior { mu, sigma, active })
}

/// Eigenvalue-ratio condition estimate of a symmetric matrix.
fn condition_sym(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let min = eig.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Observation covariance `C = β⁻¹I + Σ_active Φ_i A_i Φ_iᵀ` (M×M).
pub fn observation_covariance(
    system: &MeasurementSystem,
    partition: &BlockPartition,
    covs: &ActiveCovariances,
) -> DMatrix<f64> {
    let m = system.m();
    let mut c = DMatrix::identity(m, m) / system.beta();
    for (&i, cov) in covs {
        let phi_i = system.phi().columns(partition.offset(i), partition.size(i));
        c += &phi_i * cov.a() * phi_i.transpose();
    }
    symmetrized(c)
}

/// Type-II cost `log|C| + yᵀC⁻¹y`, evaluated through a Cholesky factor of C.
pub fn cost_direct(
    system: &MeasurementSystem,
    partition: &BlockPartition,
    covs: &ActiveCovariances,
) -> Result<f64> {
    system.check_partition(partition)?;
    check_covs(partition, covs)?;
    let c = observation_covariance(system, partition, covs);
    let chol = c
        .clone()
        .cholesky()
        .ok_or_else(|| BsblError::IllConditioned {
            condition: condition_sym(&c),
        })?;
    let log_det: f64 = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let c_inv_y = chol.solve(system.y());
    let cost = log_det + system.y().dot(&c_inv_y);
    if !cost.is_finite() {
        return Err(BsblError::IllConditioned {
            condition: condition_sym(&c),
        });
    }
    Ok(cost)
}

/// Per-block cost `L(i) = log|I + A s| − qᵀ(A⁻¹ + s)⁻¹q`.
///
/// Evaluated as `log|I + A s| − qᵀ(I + A s)⁻¹A q`, which needs no inverse of
/// `A` and gives exactly 0 for `A = 0`.
pub fn cost_block(s: &DMatrix<f64>, q: &DVector<f64>, a: &DMatrix<f64>) -> Result<f64> {
    let d = s.nrows();
    if s.ncols() != d || q.len() != d || a.nrows() != d || a.ncols() != d {
        return Err(BsblError::DimensionMismatch(format!(
            "cost_block expects {d}x{d} statistics and covariance"
        )));
    }
    if a.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let m = DMatrix::identity(d, d) + a * s;
    let m_inv = checked_inverse(&m).map_err(|condition| BsblError::NumericalDegeneracy {
        context: "block cost (A⁻¹ + s)".into(),
        condition,
    })?;
    let (sign, log_det) = log_abs_det(&m);
    if sign <= 0.0 {
        return Err(BsblError::NumericalDegeneracy {
            context: "block cost determinant is not positive".into(),
            condition: f64::INFINITY,
        });
    }
    let value = log_det - q.dot(&(m_inv * (a * q)));
    if !value.is_finite() {
        return Err(BsblError::NumericalDegeneracy {
            context: "block cost".into(),
            condition: f64::INFINITY,
        });
    }
    Ok(value)
}

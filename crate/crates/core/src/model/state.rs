use nalgebra::{DMatrix, DVector};

use super::{
    block_columns, compute_posterior, ActiveCovariances, BlockCovariance, MeasurementSystem,
    Posterior,
};
use crate::error::{BsblError, Result};
use crate::linalg::{checked_inverse, symmetrize, symmetrized};
use crate::partition::BlockPartition;

/// Curvature and correlation statistics of one block: `(S_i, Q_i)` under
/// the full covariance C, or `(s_i, q_i)` under the leave-block-out `C_{-i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStats {
    pub s: DMatrix<f64>,
    pub q: DVector<f64>,
}

/// Mutable state of the fast marginal-likelihood iteration.
///
/// Besides the posterior, the state keeps `P = βΦᵀΦ_a` (N × K, columns of the
/// active coefficients), from which every full statistic follows:
/// `S_i = βΦ_iᵀΦ_i − P_i Σ P_iᵀ` and `Q = βΦᵀy − Pμ`.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub(crate) partition: BlockPartition,
    pub(crate) system: MeasurementSystem,
    pub(crate) covs: ActiveCovariances,
    pub(crate) posterior: Posterior,
    pub(crate) full_stats: Vec<BlockStats>,
    pub(crate) loo_stats: Vec<BlockStats>,
    pub(crate) cost: f64,
    pub(crate) cross: DMatrix<f64>,
    pub(crate) gram: Vec<DMatrix<f64>>,
    pub(crate) phi_t_y: DVector<f64>,
}

/// Largest relative differences between incremental caches and a
/// from-scratch rebuild.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CacheDiscrepancy {
    pub sigma: f64,
    pub mu: f64,
    pub full_s: f64,
    pub full_q: f64,
    pub loo_s: f64,
    pub loo_q: f64,
    pub cost: f64,
}

impl CacheDiscrepancy {
    pub fn max(&self) -> f64 {
        [
            self.sigma,
            self.mu,
            self.full_s,
            self.full_q,
            self.loo_s,
            self.loo_q,
            self.cost,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl ModelState {
    /// Build every cache directly from the model `(system, partition, covs)`.
    pub fn from_scratch(
        system: &MeasurementSystem,
        partition: &BlockPartition,
        covs: &ActiveCovariances,
    ) -> Result<Self> {
        system.check_partition(partition)?;
        let phi = system.phi();
        let beta = system.beta();
        let gram = (0..partition.num_blocks())
            .map(|i| {
                let phi_i = phi.columns(partition.offset(i), partition.size(i));
                symmetrized(phi_i.tr_mul(&phi_i))
            })
            .collect();
        let phi_t_y = phi.tr_mul(system.y());
        let posterior = compute_posterior(system, partition, covs)?;
        let phi_a = block_columns(phi, partition, &posterior.active);
        let cross = phi.tr_mul(&phi_a) * beta;

        let mut state = Self {
            partition: partition.clone(),
            system: system.clone(),
            covs: covs.clone(),
            posterior,
            full_stats: Vec::new(),
            loo_stats: Vec::new(),
            cost: 0.0,
            cross,
            gram,
            phi_t_y,
        };
        state.full_stats = state.scratch_full_stats();
        state.refresh_loo_stats()?;
        state.cost = state.cost_from_posterior()?;
        Ok(state)
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn system(&self) -> &MeasurementSystem {
        &self.system
    }

    pub fn covariances(&self) -> &ActiveCovariances {
        &self.covs
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn full_stats(&self) -> &[BlockStats] {
        &self.full_stats
    }

    pub fn loo_stats(&self) -> &[BlockStats] {
        &self.loo_stats
    }

    /// Cached value of the type-II cost.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn is_active(&self, block: usize) -> bool {
        self.covs.contains_key(&block)
    }

    /// MAP estimate `x = ΣΦᵀβy`, zero on inactive blocks.
    pub fn map_estimate(&self) -> DVector<f64> {
        self.posterior.embed(&self.partition)
    }

    /// Offset of `block` inside the posterior vector, if active.
    pub(crate) fn posterior_offset(&self, block: usize) -> Option<usize> {
        if !self.is_active(block) {
            return None;
        }
        Some(
            self.posterior
                .active
                .iter()
                .take_while(|&&b| b < block)
                .map(|&b| self.partition.size(b))
                .sum(),
        )
    }

    fn scratch_full_stats(&self) -> Vec<BlockStats> {
        let beta = self.system.beta();
        let sigma_pt = &self.posterior.sigma * self.cross.transpose();
        let q_all = &self.phi_t_y * beta - &self.cross * &self.posterior.mu;
        (0..self.partition.num_blocks())
            .map(|i| {
                let (off, d) = (self.partition.offset(i), self.partition.size(i));
                let p_i = self.cross.rows(off, d);
                let mut s = &self.gram[i] * beta - p_i * sigma_pt.columns(off, d);
                symmetrize(&mut s);
                BlockStats {
                    s,
                    q: q_all.rows(off, d).into_owned(),
                }
            })
            .collect()
    }

    /// Recompute `(s_i, q_i)` from the full statistics and the posterior.
    ///
    /// Inactive blocks copy `(S_i, Q_i)`. Active blocks use
    /// `s_i = Σ_ii⁻¹ − A_i⁻¹` and `q_i = Σ_ii⁻¹ μ_i`, which equal
    /// `(I − S_i A_i)⁻¹(S_i, Q_i)` but avoid the cancellation in `I − S_i A_i`
    /// at high noise precision.
    pub(crate) fn refresh_loo_stats(&mut self) -> Result<()> {
        let mut loo = Vec::with_capacity(self.partition.num_blocks());
        for i in 0..self.partition.num_blocks() {
            match self.posterior_offset(i) {
                None => loo.push(self.full_stats[i].clone()),
                Some(pos) => {
                    let d = self.partition.size(i);
                    let sigma_ii = self.posterior.sigma.view((pos, pos), (d, d)).into_owned();
                    let sigma_inv = checked_inverse(&sigma_ii).map_err(|condition| {
                        BsblError::DeflationFailure {
                            block: Some(i),
                            condition,
                        }
                    })?;
                    let a_inv = checked_inverse(self.covs[&i].a()).map_err(|condition| {
                        BsblError::DegeneratePrior {
                            block: Some(i),
                            reason: format!("not invertible (condition {condition:e})"),
                        }
                    })?;
                    let s = symmetrized(&sigma_inv - a_inv);
                    let q = &sigma_inv * self.posterior.mu.rows(pos, d);
                    loo.push(BlockStats { s, q });
                }
            }
        }
        self.loo_stats = loo;
        Ok(())
    }

    /// Cost from the posterior in O(K³):
    /// `log|C| = −M log β + log|Γ| − log|Σ|` and `yᵀC⁻¹y = β‖y‖² − βyᵀΦ_aμ`.
    pub(crate) fn cost_from_posterior(&self) -> Result<f64> {
        let beta = self.system.beta();
        let m = self.system.m() as f64;
        let y = self.system.y();
        let mut log_det = -m * beta.ln();
        let mut fit = beta * y.norm_squared();
        if !self.covs.is_empty() {
            for cov in self.covs.values() {
                log_det += cholesky_log_det(cov.a()).ok_or_else(|| BsblError::DegeneratePrior {
                    block: None,
                    reason: "covariance is not positive definite".into(),
                })?;
            }
            log_det -= cholesky_log_det(&self.posterior.sigma).ok_or_else(|| {
                BsblError::NumericalDegeneracy {
                    context: "posterior covariance".into(),
                    condition: f64::INFINITY,
                }
            })?;
            // Φ_aᵀy is a gather of Φᵀy.
            let mut pos = 0;
            for &b in &self.posterior.active {
                let d = self.partition.size(b);
                fit -= beta
                    * self
                        .phi_t_y
                        .rows(self.partition.offset(b), d)
                        .dot(&self.posterior.mu.rows(pos, d));
                pos += d;
            }
        }
        Ok(log_det + fit)
    }

    /// Compare all incremental caches against a from-scratch rebuild.
    pub fn discrepancy(&self) -> Result<CacheDiscrepancy> {
        let fresh = Self::from_scratch(&self.system, &self.partition, &self.covs)?;
        let rel = |num: f64, den: f64| num / den.max(f64::MIN_POSITIVE);
        let max_pair = |a: &[BlockStats], b: &[BlockStats]| {
            let (mut ds, mut ss, mut dq, mut sq) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for (x, y) in a.iter().zip(b) {
                ds = ds.max((&x.s - &y.s).amax());
                ss = ss.max(y.s.amax());
                dq = dq.max((&x.q - &y.q).amax());
                sq = sq.max(y.q.amax());
            }
            (rel(ds, ss), rel(dq, sq))
        };
        let (full_s, full_q) = max_pair(&self.full_stats, &fresh.full_stats);
        let (loo_s, loo_q) = max_pair(&self.loo_stats, &fresh.loo_stats);
        let (sigma, mu) = if self.posterior.active.is_empty() {
            (0.0, 0.0)
        } else {
            (
                rel(
                    (&self.posterior.sigma - &fresh.posterior.sigma).amax(),
                    fresh.posterior.sigma.amax(),
                ),
                rel(
                    (&self.posterior.mu - &fresh.posterior.mu).amax(),
                    fresh.posterior.mu.amax(),
                ),
            )
        };
        Ok(CacheDiscrepancy {
            sigma,
            mu,
            full_s,
            full_q,
            loo_s,
            loo_q,
            cost: rel((self.cost - fresh.cost).abs(), fresh.cost.abs()),
        })
    }

    /// Fail with an internal-inconsistency error when any cache drifted
    /// beyond `tol` from its from-scratch value.
    pub fn verify(&self, tol: f64) -> Result<()> {
        let d = self.discrepancy()?;
        if d.max() > tol {
            return Err(BsblError::InternalInconsistency(format!(
                "incremental caches drifted from a fresh rebuild: {d:?}"
            )));
        }
        Ok(())
    }

    pub(crate) fn insert_covariance(&mut self, block: usize, cov: BlockCovariance) {
        self.covs.insert(block, cov);
    }
}

fn cholesky_log_det(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    Some(
        2.0 * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>(),
    )
}

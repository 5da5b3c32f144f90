//! Proposal and incremental update of the model state.

use nalgebra::{DMatrix, DVector};

use super::ops::{block_relevance, candidate_covariance, regularize};
use super::{ActionKind, ActionProposal, CorrelationModel};
use crate::error::{BsblError, Result};
use crate::linalg::{checked_inverse, symmetrize, symmetrized};
use crate::model::{
    block_columns, cost_block, ActiveCovariances, BlockCovariance, BlockStats, MeasurementSystem,
    ModelState, Posterior,
};
use crate::partition::BlockPartition;

/// Empty model: `C = β⁻¹I`, so `s_i = S_i = βΦ_iᵀΦ_i` and `q_i = Q_i = βΦ_iᵀy`.
pub fn initialize(system: &MeasurementSystem, partition: &BlockPartition) -> Result<ModelState> {
    system.check_partition(partition)?;
    let beta = system.beta();
    let phi = system.phi();
    let gram: Vec<DMatrix<f64>> = (0..partition.num_blocks())
        .map(|i| {
            let phi_i = phi.columns(partition.offset(i), partition.size(i));
            symmetrized(phi_i.tr_mul(&phi_i))
        })
        .collect();
    let phi_t_y = phi.tr_mul(system.y());
    let full_stats: Vec<BlockStats> = gram
        .iter()
        .enumerate()
        .map(|(i, g)| BlockStats {
            s: g * beta,
            q: phi_t_y.rows(partition.offset(i), partition.size(i)) * beta,
        })
        .collect();
    let m = system.m() as f64;
    let cost = beta * system.y().norm_squared() - m * beta.ln();
    Ok(ModelState {
        partition: partition.clone(),
        system: system.clone(),
        covs: ActiveCovariances::new(),
        posterior: Posterior::empty(),
        loo_stats: full_stats.clone(),
        full_stats,
        cost,
        cross: DMatrix::zeros(system.n(), 0),
        gram,
        phi_t_y,
    })
}

/// Evaluate the best action for block `i` and its cost change
/// `ΔL = L(A*) − L(A_current)`.
pub fn propose_action(
    state: &ModelState,
    block: usize,
    model: CorrelationModel,
) -> Result<ActionProposal> {
    let BlockStats { s, q } = &state.loo_stats[block];
    let candidate = candidate_covariance(s, q).map_err(|e| e.at_block(block))?;
    let gamma = block_relevance(&candidate);
    let current = state.covs.get(&block);

    if gamma > 0.0 && gamma.is_finite() {
        let a_star = regularize(&candidate, model).map_err(|e| e.at_block(block))?;
        let new_cost = cost_block(s, q, a_star.a())?;
        let (action, old_cost) = match current {
            Some(cov) => (ActionKind::ReEstimate, cost_block(s, q, cov.a())?),
            None => (ActionKind::Add, 0.0),
        };
        Ok(ActionProposal {
            block,
            action,
            a_star: Some(a_star),
            delta: new_cost - old_cost,
        })
    } else {
        match current {
            Some(cov) => Ok(ActionProposal {
                block,
                action: ActionKind::Delete,
                a_star: None,
                delta: -cost_block(s, q, cov.a())?,
            }),
            None => Ok(ActionProposal::none(block)),
        }
    }
}

/// Apply an accepted proposal and update Σ, μ, all statistics and the cost.
pub fn apply_action(state: &mut ModelState, proposal: &ActionProposal) -> Result<()> {
    let j = proposal.block;
    match (proposal.action, &proposal.a_star) {
        (ActionKind::Add, Some(cov)) if !state.is_active(j) => add_block(state, j, cov.clone())?,
        (ActionKind::ReEstimate, Some(cov)) if state.is_active(j) => {
            reestimate_block(state, j, cov.clone())?
        }
        (ActionKind::Delete, None) if state.is_active(j) => delete_block(state, j)?,
        _ => {
            return Err(BsblError::InternalInconsistency(format!(
                "cannot apply {:?} to block {j} (active: {})",
                proposal.action,
                state.is_active(j)
            )))
        }
    }
    for stats in &mut state.full_stats {
        symmetrize(&mut stats.s);
    }
    symmetrize(&mut state.posterior.sigma);
    state.refresh_loo_stats()?;
    state.cost += proposal.delta;
    Ok(())
}

fn add_block(state: &mut ModelState, j: usize, cov: BlockCovariance) -> Result<()> {
    let beta = state.system.beta();
    let (off, d) = (state.partition.offset(j), state.partition.size(j));
    let a = cov.a();
    let BlockStats { s: s_j, q: q_j } = &state.full_stats[j];

    // Σ_jj = (A⁻¹ + S_j)⁻¹ = (I + A S_j)⁻¹ A
    let m = DMatrix::identity(d, d) + a * s_j;
    let m_inv = checked_inverse(&m).map_err(|condition| BsblError::NumericalDegeneracy {
        context: format!("adding block {j}"),
        condition,
    })?;
    let sigma_jj = symmetrized(m_inv * a);
    let mu_j = &sigma_jj * q_j;

    let phi_j = state.system.phi().columns(off, d);
    let bf = state.system.phi().tr_mul(&phi_j) * beta;

    let k = state.posterior.mu.len();
    let pos = state
        .posterior
        .active
        .iter()
        .take_while(|&&b| b < j)
        .map(|&b| state.partition.size(b))
        .sum::<usize>();

    // T = Σ P_jᵀ where P_j are the rows of P = βΦᵀΦ_a for block j.
    let t = &state.posterior.sigma * state.cross.rows(off, d).transpose();
    let z = &bf - &state.cross * &t;

    for (i, stats) in state.full_stats.iter_mut().enumerate() {
        let (oi, di) = (state.partition.offset(i), state.partition.size(i));
        let z_i = z.rows(oi, di);
        stats.s -= &z_i * &sigma_jj * z_i.transpose();
    }
    let q_shift = &z * &mu_j;
    for (i, stats) in state.full_stats.iter_mut().enumerate() {
        stats.q -= q_shift.rows(state.partition.offset(i), state.partition.size(i));
    }

    let t_sigma = &t * &sigma_jj;
    let sigma_aa = &state.posterior.sigma + &t_sigma * t.transpose();
    let mu_a = &state.posterior.mu - &t * &mu_j;

    let mut sigma = DMatrix::zeros(k + d, k + d);
    let mut mu = DVector::zeros(k + d);
    // Scatter the old active coordinates around the inserted block.
    let old_to_new = |idx: usize| if idx < pos { idx } else { idx + d };
    for c in 0..k {
        for r in 0..k {
            sigma[(old_to_new(r), old_to_new(c))] = sigma_aa[(r, c)];
        }
        for r in 0..d {
            sigma[(pos + r, old_to_new(c))] = -t_sigma[(c, r)];
            sigma[(old_to_new(c), pos + r)] = -t_sigma[(c, r)];
        }
        mu[old_to_new(c)] = mu_a[c];
    }
    sigma.view_mut((pos, pos), (d, d)).copy_from(&sigma_jj);
    mu.rows_mut(pos, d).copy_from(&mu_j);

    let cross = std::mem::replace(&mut state.cross, DMatrix::zeros(0, 0));
    let mut cross = cross.insert_columns(pos, d, 0.0);
    cross.columns_mut(pos, d).copy_from(&bf);

    state.cross = cross;
    state.posterior.sigma = sigma;
    state.posterior.mu = mu;
    let at = state.posterior.active.partition_point(|&b| b < j);
    state.posterior.active.insert(at, j);
    state.insert_covariance(j, cov);
    Ok(())
}

/// Shared rank-d downdate used by re-estimation and deletion:
/// `Σ ← Σ − Σ_{:,j} K Σ_{j,:}`, `μ ← μ − Σ_{:,j} K μ_j`,
/// `S_i ← S_i + W_i K W_iᵀ`, `Q ← Q + W K μ_j` with `W = P Σ_{:,j}`.
fn rank_update(state: &mut ModelState, pos: usize, d: usize, kmat: &DMatrix<f64>) {
    let sigma_col = state.posterior.sigma.columns(pos, d).into_owned();
    let mu_j = state.posterior.mu.rows(pos, d).into_owned();
    let w = &state.cross * &sigma_col;
    let k_mu = kmat * &mu_j;

    for (i, stats) in state.full_stats.iter_mut().enumerate() {
        let (oi, di) = (state.partition.offset(i), state.partition.size(i));
        let w_i = w.rows(oi, di);
        stats.s += &w_i * kmat * w_i.transpose();
    }
    let q_shift = &w * &k_mu;
    for (i, stats) in state.full_stats.iter_mut().enumerate() {
        stats.q += q_shift.rows(state.partition.offset(i), state.partition.size(i));
    }
    state.posterior.sigma -= &sigma_col * kmat * sigma_col.transpose();
    state.posterior.mu -= &sigma_col * k_mu;
}

fn reestimate_block(state: &mut ModelState, j: usize, cov: BlockCovariance) -> Result<()> {
    let d = state.partition.size(j);
    let pos = state.posterior_offset(j).expect("active block");
    let degenerate = |condition| BsblError::DegeneratePrior {
        block: Some(j),
        reason: format!("not invertible (condition {condition:e})"),
    };
    // Precision change Δ = A*⁻¹ − A⁻¹, applied as K = Δ(I + Σ_jj Δ)⁻¹.
    let delta = checked_inverse(cov.a()).map_err(degenerate)?
        - checked_inverse(state.covs[&j].a()).map_err(degenerate)?;
    let sigma_jj = state.posterior.sigma.view((pos, pos), (d, d)).into_owned();
    let m = DMatrix::identity(d, d) + &sigma_jj * &delta;
    let m_inv = checked_inverse(&m).map_err(|condition| BsblError::NumericalDegeneracy {
        context: format!("re-estimating block {j}"),
        condition,
    })?;
    let kmat = symmetrized(&delta * m_inv);
    rank_update(state, pos, d, &kmat);
    state.insert_covariance(j, cov);
    Ok(())
}

fn delete_block(state: &mut ModelState, j: usize) -> Result<()> {
    let d = state.partition.size(j);
    let pos = state.posterior_offset(j).expect("active block");
    let sigma_jj = state.posterior.sigma.view((pos, pos), (d, d)).into_owned();
    let kmat = checked_inverse(&sigma_jj).map_err(|condition| BsblError::NumericalDegeneracy {
        context: format!("deleting block {j}"),
        condition,
    })?;
    rank_update(state, pos, d, &symmetrized(kmat));

    let sigma = std::mem::replace(&mut state.posterior.sigma, DMatrix::zeros(0, 0));
    state.posterior.sigma = sigma.remove_rows(pos, d).remove_columns(pos, d);
    let mu = std::mem::replace(&mut state.posterior.mu, DVector::zeros(0));
    state.posterior.mu = mu.remove_rows(pos, d);
    let cross = std::mem::replace(&mut state.cross, DMatrix::zeros(0, 0));
    state.cross = cross.remove_columns(pos, d);
    state.posterior.active.retain(|&b| b != j);
    state.covs.remove(&j);
    Ok(())
}

/// Maximum-likelihood noise precision `M / (Tr[ΣΦ_aᵀΦ_a] + ‖y − Φ_aμ‖²)`.
pub fn beta_ml_update(state: &ModelState) -> Result<f64> {
    let system = &state.system;
    let phi_a = block_columns(system.phi(), &state.partition, &state.posterior.active);
    let residual = system.y() - &phi_a * &state.posterior.mu;
    let trace = if state.posterior.active.is_empty() {
        0.0
    } else {
        (&state.posterior.sigma * phi_a.tr_mul(&phi_a)).trace()
    };
    let denominator = trace + residual.norm_squared();
    if !(denominator > 0.0) || !denominator.is_finite() {
        return Err(BsblError::NumericalDegeneracy {
            context: "noise precision update".into(),
            condition: f64::INFINITY,
        });
    }
    Ok(system.m() as f64 / denominator)
}

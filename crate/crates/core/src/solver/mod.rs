//! Fast marginalized block sparse Bayesian learning.
//!
//! Every iteration evaluates, for each block, the covariance that makes its
//! share of the cost stationary, imposes the chosen correlation model on it,
//! and scores the resulting add / re-estimate / delete move by its exact cost
//! change. Only the single move with the deepest descent is applied, after
//! which the posterior and all block statistics are updated incrementally.

mod ops;
mod update;

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{BsblError, Result};
use crate::model::{BlockCovariance, MeasurementSystem, ModelState};
use crate::partition::BlockPartition;

pub use ops::{
    block_relevance, candidate_covariance, estimate_ar_coefficient, leave_one_out_stats,
    noise_precision_heuristic, regularize, unit_template, AR_CLIP,
};
pub use update::{apply_action, beta_ml_update, initialize, propose_action};

/// Intra-block correlation model imposed on every candidate covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CorrelationModel {
    /// `B_i = I`; correlation ignored.
    Sim,
    /// `B_i = Toeplitz(1, r_i, …)` with `r_i` estimated per block.
    Ar1,
    /// One AR(1) coefficient shared by all blocks.
    Ar1Averaged { shared_r: f64 },
}

impl CorrelationModel {
    pub fn label(&self) -> &'static str {
        match self {
            CorrelationModel::Sim => "bsbl-fm0",
            CorrelationModel::Ar1 => "bsbl-fm1",
            CorrelationModel::Ar1Averaged { .. } => "bsbl-fm2",
        }
    }

    pub fn averaged() -> Self {
        CorrelationModel::Ar1Averaged { shared_r: 0.0 }
    }
}

/// How the noise precision β is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaMode {
    Fixed(f64),
    /// `β⁻¹ = 1e-6`.
    Noiseless,
    /// `β⁻¹ = 0.1‖y‖²`, for SNR below 20 dB.
    LowSnr,
    /// `β⁻¹ = 0.01‖y‖²`, for SNR of 20 dB and above.
    HighSnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub model: CorrelationModel,
    /// Stop once the best cost change is smaller than this in magnitude.
    pub eta: f64,
    pub max_iters: usize,
    pub beta_mode: BetaMode,
    /// Re-estimate β by maximum likelihood after every applied move.
    pub learn_beta: bool,
    /// Rebuild the state from scratch after every move and fail on drift.
    /// Expensive; for testing.
    pub check_consistency: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            model: CorrelationModel::Ar1,
            eta: 1e-4,
            max_iters: 1000,
            beta_mode: BetaMode::HighSnr,
            learn_beta: false,
            check_consistency: false,
        }
    }
}

impl SolverOptions {
    pub fn with_model(model: CorrelationModel) -> Self {
        Self {
            model,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(BsblError::InvalidSpec(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.max_iters == 0 {
            return Err(BsblError::InvalidSpec(
                "max_iters must be at least 1".into(),
            ));
        }
        if let CorrelationModel::Ar1Averaged { shared_r } = self.model {
            if !(shared_r.abs() <= AR_CLIP) {
                return Err(BsblError::InvalidSpec(format!(
                    "shared AR coefficient {shared_r} outside [-0.99, 0.99]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Add,
    ReEstimate,
    Delete,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionProposal {
    pub block: usize,
    pub action: ActionKind,
    pub a_star: Option<BlockCovariance>,
    /// Cost change of the move; negative is an improvement.
    pub delta: f64,
}

impl ActionProposal {
    pub fn none(block: usize) -> Self {
        Self {
            block,
            action: ActionKind::None,
            a_star: None,
            delta: 0.0,
        }
    }
}

/// One applied move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedAction {
    pub block: usize,
    pub action: ActionKind,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    /// MAP estimate, zero outside the active blocks.
    pub x: DVector<f64>,
    pub active: Vec<usize>,
    pub covs: BTreeMap<usize, BlockCovariance>,
    pub iterations: usize,
    /// Cost before the first move and after each applied move.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    /// Best cost change found by the final sweep.
    pub last_delta: f64,
    pub beta: f64,
    pub actions: Vec<AppliedAction>,
}

/// Pick the proposal with the smallest cost change; ties go to the lowest block index.
pub fn select_best(proposals: &[ActionProposal]) -> Option<&ActionProposal> {
    proposals
        .iter()
        .fold(None, |best: Option<&ActionProposal>, p| match best {
            Some(b) if b.delta <= p.delta => Some(b),
            _ => Some(p),
        })
}

/// Mean AR(1) coefficient of the current candidates of the active blocks,
/// or `None` when no active block has positive candidate relevance.
fn shared_coefficient(state: &ModelState) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &i in state.covariances().keys() {
        let stats = &state.loo_stats()[i];
        let candidate = candidate_covariance(&stats.s, &stats.q).map_err(|e| e.at_block(i))?;
        let gamma = block_relevance(&candidate);
        if gamma > 0.0 && gamma.is_finite() {
            sum += estimate_ar_coefficient(&(candidate / gamma))?;
            count += 1;
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Run the greedy marginal-likelihood iteration to convergence.
pub fn solve(
    system: &MeasurementSystem,
    partition: &BlockPartition,
    options: &SolverOptions,
) -> Result<RecoveryResult> {
    options.validate()?;
    system.check_partition(partition)?;

    if system.y().iter().all(|v| *v == 0.0) {
        // Nothing to explain: every candidate is −s⁻¹ and no block enters.
        return Ok(RecoveryResult {
            x: DVector::zeros(system.n()),
            active: Vec::new(),
            covs: BTreeMap::new(),
            iterations: 1,
            cost_trace: vec![system.m() as f64 * system.beta().recip().ln()],
            converged: true,
            last_delta: 0.0,
            beta: system.beta(),
            actions: Vec::new(),
        });
    }

    let beta = noise_precision_heuristic(system.y(), options.beta_mode)?;
    let system = system.with_beta(beta)?;
    let mut state = initialize(&system, partition)?;
    let mut cost_trace = vec![state.cost()];
    let mut actions = Vec::new();
    let mut converged = false;
    let mut last_delta = f64::NAN;
    let mut iterations = 0;
    let mut shared_r = match options.model {
        CorrelationModel::Ar1Averaged { shared_r } => shared_r,
        _ => 0.0,
    };

    while iterations < options.max_iters {
        iterations += 1;
        let model = match options.model {
            CorrelationModel::Ar1Averaged { .. } => match shared_coefficient(&state)? {
                Some(r) => {
                    shared_r = r;
                    CorrelationModel::Ar1Averaged { shared_r }
                }
                // No active block to average over yet: each candidate keeps its own r.
                None if state.covariances().is_empty() => CorrelationModel::Ar1,
                None => CorrelationModel::Ar1Averaged { shared_r },
            },
            m => m,
        };
        let proposals = (0..partition.num_blocks())
            .map(|i| propose_action(&state, i, model))
            .collect::<Result<Vec<_>>>()?;
        let best = select_best(&proposals).expect("at least one block").clone();
        last_delta = best.delta;
        if best.action == ActionKind::None || best.delta.abs() < options.eta {
            converged = true;
            break;
        }
        if best.delta > 0.0 {
            // Every move would raise the cost: stalled short of stationarity.
            break;
        }
        apply_action(&mut state, &best)?;
        actions.push(AppliedAction {
            block: best.block,
            action: best.action,
            delta: best.delta,
        });
        if options.learn_beta {
            let beta = beta_ml_update(&state)?;
            let system = state.system().with_beta(beta)?;
            state = ModelState::from_scratch(&system, partition, state.covariances())?;
        }
        if options.check_consistency {
            state.verify(1e-6)?;
        }
        cost_trace.push(state.cost());
    }

    Ok(RecoveryResult {
        x: state.map_estimate(),
        active: state.posterior().active.clone(),
        covs: state.covariances().clone(),
        iterations,
        cost_trace,
        converged,
        last_delta,
        beta: state.system().beta(),
        actions,
    })
}

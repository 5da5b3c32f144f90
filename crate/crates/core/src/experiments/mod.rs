//! Generators, metrics and benchmark harnesses: the noiseless phase
//! transition, the noisy size sweep and the transform-domain pipeline.

mod dct;
pub(crate) mod generators;
mod harness;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{BsblError, Result};
use crate::solver::CorrelationModel;

pub use dct::{dct_basis, recover_transform_domain};
pub use generators::{
    add_noise_at_snr, derive_seed, gen_block_sparse_signal, gen_ecg_like, gen_gaussian_matrix,
    gen_sparse_binary_matrix, rng_for, toeplitz_ar, CorrelationSpec, EcgSpec, GeneratedSignal,
    SignalSpec,
};
pub use harness::{
    run_dct_demo, run_dct_demo_with, run_noisy_sweep, run_noisy_sweep_with, run_phase_transition,
    run_phase_transition_with, DctConfig, PhaseConfig, PhaseGrid, PhaseRun, SweepBeta, SweepConfig,
};

/// A trial counts as exact recovery when its NMSE is at most this.
pub const SUCCESS_NMSE: f64 = 1e-5;

/// `‖x̂ − x‖² / ‖x‖²`.
pub fn nmse(x_hat: &DVector<f64>, x_gen: &DVector<f64>) -> Result<f64> {
    if x_hat.len() != x_gen.len() {
        return Err(BsblError::DimensionMismatch(format!(
            "estimate has length {} but reference has length {}",
            x_hat.len(),
            x_gen.len()
        )));
    }
    let energy = x_gen.norm_squared();
    if !(energy > 0.0) {
        return Err(BsblError::InvalidReference);
    }
    Ok((x_hat - x_gen).norm_squared() / energy)
}

pub fn is_success(nmse: f64) -> bool {
    nmse <= SUCCESS_NMSE
}

/// Recovery algorithms the harnesses can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "bsbl-fm0")]
    BsblFm0,
    #[serde(rename = "bsbl-fm1")]
    BsblFm1,
    #[serde(rename = "bsbl-fm2")]
    BsblFm2,
    #[serde(rename = "block-omp")]
    BlockOmp,
    #[serde(rename = "oracle-ls")]
    OracleLs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::BsblFm0,
        Algorithm::BsblFm1,
        Algorithm::BsblFm2,
        Algorithm::BlockOmp,
        Algorithm::OracleLs,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::BsblFm0 => "bsbl-fm0",
            Algorithm::BsblFm1 => "bsbl-fm1",
            Algorithm::BsblFm2 => "bsbl-fm2",
            Algorithm::BlockOmp => "block-omp",
            Algorithm::OracleLs => "oracle-ls",
        }
    }

    /// Correlation model for the BSBL-FM variants.
    pub fn model(&self) -> Option<CorrelationModel> {
        match self {
            Algorithm::BsblFm0 => Some(CorrelationModel::Sim),
            Algorithm::BsblFm1 => Some(CorrelationModel::Ar1),
            Algorithm::BsblFm2 => Some(CorrelationModel::averaged()),
            _ => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = BsblError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.label() == s)
            .ok_or_else(|| BsblError::InvalidSpec(format!("unknown algorithm '{s}'")))
    }
}

/// Outcome of one algorithm on one generated problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub k_active: usize,
    /// Intra-block AR coefficient of the generator (mean over the support
    /// blocks when drawn per block); absent when not applicable.
    pub r: Option<f64>,
    /// Measurement SNR in dB; absent for noiseless trials.
    pub snr_db: Option<f64>,
    pub nmse: f64,
    pub runtime_s: f64,
    pub success: bool,
}

impl TrialRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        algorithm: Algorithm,
        seed: u64,
        n: usize,
        m: usize,
        k_active: usize,
        r: Option<f64>,
        snr_db: Option<f64>,
        nmse: f64,
        runtime_s: f64,
    ) -> Self {
        Self {
            algorithm,
            seed,
            n,
            m,
            k_active,
            r,
            snr_db,
            nmse,
            runtime_s,
            success: is_success(nmse),
        }
    }
}

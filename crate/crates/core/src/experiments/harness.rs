use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dct::dct_basis;
use super::generators::{
    add_noise_at_snr, derive_seed, gen_block_sparse_signal, gen_ecg_like, gen_gaussian_matrix,
    gen_sparse_binary_matrix, CorrelationSpec, EcgSpec, SignalSpec,
};
use super::{nmse, Algorithm, TrialRecord};
use crate::baselines::{block_omp, oracle_ls, SupportSet};
use crate::error::{BsblError, Result};
use crate::model::MeasurementSystem;
use crate::partition::BlockPartition;
use crate::solver::{solve, BetaMode, SolverOptions};

// Stream tags for per-trial seed derivation.
const SIGNAL_STREAM: u64 = 1;
const MATRIX_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

fn cell_seed(trial_seed: u64, m: usize, k: usize, stream: u64) -> u64 {
    derive_seed(
        derive_seed(derive_seed(trial_seed, m as u64), k as u64),
        stream,
    )
}

struct Estimate {
    x: Option<DVector<f64>>,
    runtime_s: f64,
    active_blocks: usize,
}

/// Run one estimator on a prepared system. Failures yield `x = None`.
fn estimate(
    algorithm: Algorithm,
    system: &MeasurementSystem,
    partition: &BlockPartition,
    support: Option<&SupportSet>,
    k_blocks: usize,
    solver: &SolverOptions,
    timing: bool,
) -> Estimate {
    let start = Instant::now();
    let (x, active_blocks) = match algorithm.model() {
        Some(model) => {
            let opts = SolverOptions { model, ..*solver };
            match solve(system, partition, &opts) {
                Ok(res) => (Some(res.x), res.active.len()),
                Err(_) => (None, 0),
            }
        }
        None => match algorithm {
            Algorithm::BlockOmp => (block_omp(system, partition, k_blocks).ok(), k_blocks),
            Algorithm::OracleLs => {
                let x = support.and_then(|s| oracle_ls(system, partition, s).ok());
                (x, support.map_or(0, |s| s.len()))
            }
            _ => unreachable!("BSBL-FM variants carry a model"),
        },
    };
    let runtime_s = if timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    Estimate {
        x,
        runtime_s,
        active_blocks,
    }
}

fn nmse_or_one(x: Option<&DVector<f64>>, truth: &DVector<f64>) -> f64 {
    x.and_then(|x| nmse(x, truth).ok())
        .filter(|v| v.is_finite())
        .unwrap_or(1.0)
}

/// Noiseless phase-transition grid over measurement counts and block sparsity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub n_blocks: usize,
    pub block_size: usize,
    pub m_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub r: f64,
    pub trials: usize,
    pub base_seed: u64,
    pub algorithm: Algorithm,
    pub solver: SolverOptions,
    /// Record wall-clock runtimes (records are then no longer reproducible byte for byte).
    pub timing: bool,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            n_blocks: 20,
            block_size: 25,
            m_values: (50..=250).step_by(25).collect(),
            k_values: (1..=10).collect(),
            r: 0.95,
            trials: 20,
            base_seed: 0,
            algorithm: Algorithm::BsblFm1,
            solver: SolverOptions {
                beta_mode: BetaMode::Noiseless,
                ..SolverOptions::default()
            },
            timing: false,
        }
    }
}

impl PhaseConfig {
    pub fn n(&self) -> usize {
        self.n_blocks * self.block_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(BsblError::InvalidSpec("trials must be at least 1".into()));
        }
        if self.m_values.is_empty() || self.k_values.is_empty() {
            return Err(BsblError::InvalidSpec("empty phase grid".into()));
        }
        if self.m_values.contains(&0) {
            return Err(BsblError::InvalidSpec(
                "measurement count must be positive".into(),
            ));
        }
        if let Some(&k) = self.k_values.iter().find(|&&k| k == 0 || k > self.n_blocks) {
            return Err(BsblError::InvalidSpec(format!(
                "active block count {k} outside 1..={}",
                self.n_blocks
            )));
        }
        if !(self.r.abs() < 1.0) {
            return Err(BsblError::InvalidCoefficient(self.r));
        }
        self.solver.validate()
    }
}

/// Success rates over the (k_active, M) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub n: usize,
    pub block_size: usize,
    pub m_values: Vec<usize>,
    pub k_values: Vec<usize>,
    /// Indeterminacy `δ = M/N`, one per entry of `m_values`.
    pub delta: Vec<f64>,
    /// Sparsity level `ρ = K/M` with `K = k_active · d`; indexed `[k][m]`.
    pub rho: Vec<Vec<f64>>,
    /// Fraction of successful trials; indexed `[k][m]`.
    pub success: Vec<Vec<f64>>,
    pub trials: usize,
}

impl PhaseGrid {
    /// For each M, the largest ρ whose success rate reaches `threshold`
    /// (None when no cell does).
    pub fn transition_curve(&self, threshold: f64) -> Vec<Option<f64>> {
        (0..self.m_values.len())
            .map(|mi| {
                (0..self.k_values.len())
                    .filter(|&ki| self.success[ki][mi] >= threshold)
                    .map(|ki| self.rho[ki][mi])
                    .fold(None, |acc: Option<f64>, v| {
                        Some(acc.map_or(v, |a| a.max(v)))
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRun {
    pub grid: PhaseGrid,
    pub records: Vec<TrialRecord>,
}

fn phase_trial(config: &PhaseConfig, m: usize, k: usize, trial_seed: u64) -> Result<TrialRecord> {
    let n = config.n();
    let spec = SignalSpec::new(
        config.n_blocks,
        config.block_size,
        k,
        CorrelationSpec::Fixed(config.r),
    );
    let signal = gen_block_sparse_signal(&spec, cell_seed(trial_seed, m, k, SIGNAL_STREAM))?;
    let phi = gen_gaussian_matrix(m, n, cell_seed(trial_seed, m, k, MATRIX_STREAM));
    let y = &phi * &signal.x;
    let partition = BlockPartition::uniform(config.n_blocks, config.block_size)?;
    let system = MeasurementSystem::new(phi, y, 1.0)?;
    let est = estimate(
        config.algorithm,
        &system,
        &partition,
        Some(&signal.support),
        k,
        &config.solver,
        config.timing,
    );
    Ok(TrialRecord::new(
        config.algorithm,
        trial_seed,
        n,
        m,
        k,
        Some(config.r),
        None,
        nmse_or_one(est.x.as_ref(), &signal.x),
        est.runtime_s,
    ))
}

/// Run the phase grid; `on_cell` receives each finished cell's records in
/// grid order (k outer, M inner).
pub fn run_phase_transition_with<F>(config: &PhaseConfig, mut on_cell: F) -> Result<PhaseRun>
where
    F: FnMut(&[TrialRecord]) -> Result<()>,
{
    config.validate()?;
    let mut success = vec![vec![0.0; config.m_values.len()]; config.k_values.len()];
    let mut rho = success.clone();
    let mut records = Vec::new();
    for (ki, &k) in config.k_values.iter().enumerate() {
        for (mi, &m) in config.m_values.iter().enumerate() {
            let cell: Vec<TrialRecord> = (0..config.trials)
                .into_par_iter()
                .map(|t| phase_trial(config, m, k, config.base_seed.wrapping_add(t as u64)))
                .collect::<Result<_>>()?;
            success[ki][mi] =
                cell.iter().filter(|r| r.success).count() as f64 / config.trials as f64;
            rho[ki][mi] = (k * config.block_size) as f64 / m as f64;
            on_cell(&cell)?;
            records.extend(cell);
        }
    }
    let n = config.n();
    Ok(PhaseRun {
        grid: PhaseGrid {
            n,
            block_size: config.block_size,
            m_values: config.m_values.clone(),
            k_values: config.k_values.clone(),
            delta: config
                .m_values
                .iter()
                .map(|&m| m as f64 / n as f64)
                .collect(),
            rho,
            success,
            trials: config.trials,
        },
        records,
    })
}

pub fn run_phase_transition(config: &PhaseConfig) -> Result<PhaseRun> {
    run_phase_transition_with(config, |_| Ok(()))
}

/// How the sweep sets the noise precision for the BSBL-FM variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SweepBeta {
    /// Per-sample noise variance implied by the nominal SNR:
    /// `β⁻¹ = ‖y‖² / (M (1 + 10^(SNR/10)))`. Noiseless replicates use the
    /// noiseless setting.
    KnownSnr,
    /// Use the solver's own `beta_mode` unchanged.
    Solver,
}

impl SweepBeta {
    fn options(
        &self,
        solver: &SolverOptions,
        y: &DVector<f64>,
        snr_db: Option<f64>,
    ) -> SolverOptions {
        let beta_mode = match (self, snr_db) {
            (SweepBeta::Solver, _) => solver.beta_mode,
            (SweepBeta::KnownSnr, None) => BetaMode::Noiseless,
            (SweepBeta::KnownSnr, Some(snr_db)) => {
                let energy = y.norm_squared();
                if energy > 0.0 {
                    let snr = 10f64.powf(snr_db / 10.0);
                    BetaMode::Fixed(y.len() as f64 * (1.0 + snr) / energy)
                } else {
                    BetaMode::Noiseless
                }
            }
        };
        SolverOptions {
            beta_mode,
            ..*solver
        }
    }
}

/// Noisy sweep over the signal length at a fixed measurement ratio and SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_values: Vec<usize>,
    /// M/N.
    pub measurement_ratio: f64,
    pub n_blocks: usize,
    pub k_active: usize,
    pub r_lo: f64,
    pub r_hi: f64,
    /// `None` for noiseless replicates.
    pub snr_db: Option<f64>,
    pub trials: usize,
    pub base_seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub beta: SweepBeta,
    pub solver: SolverOptions,
    pub timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_values: vec![512, 1024, 2048],
            measurement_ratio: 0.5,
            n_blocks: 32,
            k_active: 5,
            r_lo: 0.8,
            r_hi: 0.99,
            snr_db: Some(15.0),
            trials: 20,
            base_seed: 0,
            algorithms: Algorithm::ALL.to_vec(),
            beta: SweepBeta::KnownSnr,
            solver: SolverOptions::default(),
            timing: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.n_values.is_empty() || self.algorithms.is_empty() {
            return Err(BsblError::InvalidSpec(
                "sweep needs trials, signal lengths and algorithms".into(),
            ));
        }
        if !(self.measurement_ratio > 0.0) {
            return Err(BsblError::InvalidSpec(
                "measurement ratio must be positive".into(),
            ));
        }
        if self.k_active == 0 || self.k_active > self.n_blocks {
            return Err(BsblError::InvalidSpec(format!(
                "active block count {} outside 1..={}",
                self.k_active, self.n_blocks
            )));
        }
        if let Some(&n) = self
            .n_values
            .iter()
            .find(|&&n| n == 0 || n % self.n_blocks != 0)
        {
            return Err(BsblError::InvalidSpec(format!(
                "signal length {n} is not a multiple of {} blocks",
                self.n_blocks
            )));
        }
        if self.snr_db.is_some_and(|snr| !snr.is_finite()) {
            return Err(BsblError::InvalidSpec(
                "SNR must be finite; omit it for noiseless runs".into(),
            ));
        }
        if !(self.r_lo.abs() < 1.0 && self.r_hi.abs() < 1.0 && self.r_lo <= self.r_hi) {
            return Err(BsblError::InvalidSpec(format!(
                "invalid correlation range [{}, {}]",
                self.r_lo, self.r_hi
            )));
        }
        self.solver.validate()
    }

    pub fn m_for(&self, n: usize) -> usize {
        ((n as f64) * self.measurement_ratio).round() as usize
    }
}

fn sweep_trial(config: &SweepConfig, n: usize, trial_seed: u64) -> Result<Vec<TrialRecord>> {
    let m = config.m_for(n);
    let d = n / config.n_blocks;
    let spec = SignalSpec::new(
        config.n_blocks,
        d,
        config.k_active,
        CorrelationSpec::Uniform {
            lo: config.r_lo,
            hi: config.r_hi,
        },
    );
    let k = config.k_active;
    let signal = gen_block_sparse_signal(&spec, cell_seed(trial_seed, n, k, SIGNAL_STREAM))?;
    let phi = gen_gaussian_matrix(m, n, cell_seed(trial_seed, n, k, MATRIX_STREAM));
    let clean = &phi * &signal.x;
    let y = match config.snr_db {
        Some(snr) => add_noise_at_snr(&clean, snr, cell_seed(trial_seed, n, k, NOISE_STREAM))?,
        None => clean,
    };
    let partition = BlockPartition::uniform(config.n_blocks, d)?;
    let system = MeasurementSystem::new(phi, y, 1.0)?;
    let r_mean = signal.r_values.iter().sum::<f64>() / signal.r_values.len() as f64;
    let solver = config
        .beta
        .options(&config.solver, system.y(), config.snr_db);
    Ok(config
        .algorithms
        .iter()
        .map(|&alg| {
            let est = estimate(
                alg,
                &system,
                &partition,
                Some(&signal.support),
                k,
                &solver,
                config.timing,
            );
            TrialRecord::new(
                alg,
                trial_seed,
                n,
                m,
                k,
                Some(r_mean),
                config.snr_db,
                nmse_or_one(est.x.as_ref(), &signal.x),
                est.runtime_s,
            )
        })
        .collect())
}

/// Run the sweep; `on_batch` receives the records of each signal length.
pub fn run_noisy_sweep_with<F>(config: &SweepConfig, mut on_batch: F) -> Result<Vec<TrialRecord>>
where
    F: FnMut(&[TrialRecord]) -> Result<()>,
{
    config.validate()?;
    let mut records = Vec::new();
    for &n in &config.n_values {
        let batch: Vec<TrialRecord> = (0..config.trials)
            .into_par_iter()
            .map(|t| sweep_trial(config, n, config.base_seed.wrapping_add(t as u64)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        on_batch(&batch)?;
        records.extend(batch);
    }
    Ok(records)
}

pub fn run_noisy_sweep(config: &SweepConfig) -> Result<Vec<TrialRecord>> {
    run_noisy_sweep_with(config, |_| Ok(()))
}

/// Compressed sensing of synthetic ECG-like recordings with a sparse binary
/// matrix and recovery of their DCT coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DctConfig {
    pub ecg: EcgSpec,
    pub m: usize,
    pub ones_per_column: usize,
    pub block_size: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub algorithms: Vec<Algorithm>,
    /// Block budget for Block-OMP; `None` matches the number of blocks the
    /// first BSBL-FM variant in `algorithms` selected. Either way the budget
    /// is capped at `⌊M/d⌋` blocks.
    pub omp_budget: Option<usize>,
    pub solver: SolverOptions,
    pub timing: bool,
}

impl Default for DctConfig {
    fn default() -> Self {
        Self {
            ecg: EcgSpec::default(),
            m: 256,
            ones_per_column: 12,
            block_size: 32,
            trials: 20,
            base_seed: 0,
            algorithms: vec![Algorithm::BsblFm0, Algorithm::BlockOmp],
            omp_budget: None,
            solver: SolverOptions {
                beta_mode: BetaMode::Noiseless,
                ..SolverOptions::default()
            },
            timing: false,
        }
    }
}

impl DctConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.algorithms.is_empty() {
            return Err(BsblError::InvalidSpec("need trials and algorithms".into()));
        }
        if self.algorithms.contains(&Algorithm::OracleLs) {
            return Err(BsblError::InvalidSpec(
                "oracle least squares needs a known support; not available here".into(),
            ));
        }
        if self.block_size == 0 || self.ecg.n == 0 || self.m == 0 {
            return Err(BsblError::InvalidSpec("sizes must be positive".into()));
        }
        if self.ones_per_column > self.m {
            return Err(BsblError::InvalidSpec(format!(
                "{} ones per column exceed {} rows",
                self.ones_per_column, self.m
            )));
        }
        if self.omp_budget == Some(0) {
            return Err(BsblError::InvalidSpec(
                "Block-OMP budget must be positive".into(),
            ));
        }
        self.solver.validate()
    }
}

fn dct_trial(
    config: &DctConfig,
    basis: &DMatrix<f64>,
    partition: &BlockPartition,
    trial_seed: u64,
) -> Result<Vec<TrialRecord>> {
    let n = config.ecg.n;
    let x = gen_ecg_like(&config.ecg, cell_seed(trial_seed, n, 0, SIGNAL_STREAM))?;
    let phi = gen_sparse_binary_matrix(
        config.m,
        n,
        config.ones_per_column,
        cell_seed(trial_seed, n, 0, MATRIX_STREAM),
    )?;
    let y = &phi * &x;
    let system = MeasurementSystem::new(&phi * basis, y, 1.0)?;
    // Least squares on the selected blocks needs at most M columns.
    let max_budget = (config.m / config.block_size).clamp(1, partition.num_blocks());
    let default_budget = (config.m / (2 * config.block_size)).clamp(1, max_budget);
    let mut matched: Option<usize> = None;
    let mut records = Vec::with_capacity(config.algorithms.len());
    for &alg in &config.algorithms {
        let k_blocks = config
            .omp_budget
            .or(matched)
            .unwrap_or(default_budget)
            .clamp(1, max_budget);
        let est = estimate(
            alg,
            &system,
            partition,
            None,
            k_blocks,
            &config.solver,
            config.timing,
        );
        if alg.model().is_some() && matched.is_none() && est.x.is_some() {
            matched = Some(est.active_blocks.max(1));
        }
        let x_hat = est.x.map(|theta| basis * theta);
        records.push(TrialRecord::new(
            alg,
            trial_seed,
            n,
            config.m,
            est.active_blocks,
            None,
            None,
            nmse_or_one(x_hat.as_ref(), &x),
            est.runtime_s,
        ));
    }
    Ok(records)
}

/// Run the transform-domain demo; `on_trial` receives each trial's records.
pub fn run_dct_demo_with<F>(config: &DctConfig, mut on_trial: F) -> Result<Vec<TrialRecord>>
where
    F: FnMut(&[TrialRecord]) -> Result<()>,
{
    config.validate()?;
    let basis = dct_basis(config.ecg.n)?;
    let partition = BlockPartition::with_block_size(config.ecg.n, config.block_size)?;
    let per_trial: Vec<Vec<TrialRecord>> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            dct_trial(
                config,
                &basis,
                &partition,
                config.base_seed.wrapping_add(t as u64),
            )
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    for batch in per_trial {
        on_trial(&batch)?;
        records.extend(batch);
    }
    Ok(records)
}

pub fn run_dct_demo(config: &DctConfig) -> Result<Vec<TrialRecord>> {
    run_dct_demo_with(config, |_| Ok(()))
}

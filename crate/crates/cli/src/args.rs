use std::path::PathBuf;

use bsbl::experiments::Algorithm;
use bsbl::{BetaMode, CorrelationModel};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::io::Format;

#[derive(Debug, Parser)]
#[command(
    name = "bsbl",
    version,
    about = "Block sparse recovery with fast marginalized sparse Bayesian learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recover one signal from a sensing matrix and an observation.
    Solve(SolveArgs),
    /// Noiseless phase-transition grid over (M, active blocks).
    Phase(PhaseArgs),
    /// Noisy sweep over the signal length at fixed M/N and SNR.
    Sweep(SweepArgs),
    /// Sparse binary sensing of ECG-like signals, recovered in the DCT domain.
    DctDemo(DctArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Sim,
    Ar1,
    #[value(name = "ar1-avg")]
    Ar1Avg,
}

impl ModelArg {
    pub fn model(self) -> CorrelationModel {
        match self {
            ModelArg::Sim => CorrelationModel::Sim,
            ModelArg::Ar1 => CorrelationModel::Ar1,
            ModelArg::Ar1Avg => CorrelationModel::averaged(),
        }
    }

    pub fn algorithm(self) -> Algorithm {
        match self {
            ModelArg::Sim => Algorithm::BsblFm0,
            ModelArg::Ar1 => Algorithm::BsblFm1,
            ModelArg::Ar1Avg => Algorithm::BsblFm2,
        }
    }
}

/// `--beta-mode` value. `known-snr` is only meaningful for `sweep`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaArg {
    Mode(BetaMode),
    KnownSnr,
}

pub fn parse_beta(s: &str) -> Result<BetaArg, String> {
    match s {
        "noiseless" => Ok(BetaArg::Mode(BetaMode::Noiseless)),
        "low-snr" => Ok(BetaArg::Mode(BetaMode::LowSnr)),
        "high-snr" => Ok(BetaArg::Mode(BetaMode::HighSnr)),
        "known-snr" => Ok(BetaArg::KnownSnr),
        _ => {
            let value = s.strip_prefix("fixed:").ok_or_else(|| {
                format!(
                    "expected noiseless, low-snr, high-snr, known-snr or fixed:<beta>, got '{s}'"
                )
            })?;
            let beta: f64 = value
                .parse()
                .map_err(|_| format!("'{value}' is not a number"))?;
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(format!(
                    "fixed beta must be positive and finite, got {beta}"
                ));
            }
            Ok(BetaArg::Mode(BetaMode::Fixed(beta)))
        }
    }
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: bsbl::BsblError| e.to_string())
}

/// Solver settings shared by every command.
#[derive(Debug, Clone, Args)]
pub struct SolverFlags {
    /// Intra-block correlation model.
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Stop when the best cost change is smaller than this in magnitude.
    #[arg(long)]
    pub eta: Option<f64>,
    /// noiseless, low-snr, high-snr, fixed:<beta> (sweep also: known-snr).
    #[arg(long, value_parser = parse_beta)]
    pub beta_mode: Option<BetaArg>,
    /// Iteration cap
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Re-estimate the noise precision after every move.
    #[arg(long)]
    pub learn_beta: bool,
}

/// Output and seeding flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct OutputFlags {
    /// Base seed; trial t uses seed + t.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: Format,
}

/// Flags shared by the experiment commands.
#[derive(Debug, Clone, Args)]
pub struct RunFlags {
    #[arg(long)]
    pub trials: Option<usize>,
    /// Record wall-clock solve times (output is then not reproducible byte for byte).
    #[arg(long)]
    pub timing: bool,
    /// TOML or JSON file with the full experiment configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Sensing matrix file (`rows cols` header, then row-major values).
    #[arg(
        long,
        conflicts_with = "binary_sensing",
        required_unless_present = "binary_sensing"
    )]
    pub matrix: Option<PathBuf>,
    /// Generate a sparse binary sensing matrix `MxNxK` (K ones per column) from the seed.
    #[arg(long)]
    pub binary_sensing: Option<String>,
    /// Observation vector file.
    #[arg(long, conflicts_with = "signal", required_unless_present = "signal")]
    pub observation: Option<PathBuf>,
    /// Signal vector file; it is compressed with the sensing matrix and the
    /// recovery error is reported.
    #[arg(long)]
    pub signal: Option<PathBuf>,
    /// Uniform block size (the last block takes any remainder).
    #[arg(
        long,
        conflicts_with = "partition",
        required_unless_present = "partition"
    )]
    pub blocks: Option<usize>,
    /// Explicit comma-separated block sizes.
    #[arg(long, value_delimiter = ',')]
    pub partition: Option<Vec<usize>>,
    /// Recover orthonormal DCT coefficients and synthesize the signal from them.
    #[arg(long)]
    pub dct: bool,
    /// Exit with status 4 when the solver stops without converging.
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[command(flatten)]
    pub output: OutputFlags,
}

#[derive(Debug, Clone, Args)]
pub struct PhaseArgs {
    #[arg(long)]
    pub n_blocks: Option<usize>,
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Measurement counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub m_values: Option<Vec<usize>>,
    /// Active block counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,
    /// Intra-block AR coefficient of the generated signals.
    #[arg(long)]
    pub r: Option<f64>,
    /// Also write the success-rate table to this CSV file.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[command(flatten)]
    pub run: RunFlags,
    #[command(flatten)]
    pub output: OutputFlags,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Signal lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    /// Measurement ratio M/N.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub n_blocks: Option<usize>,
    #[arg(long)]
    pub k_active: Option<usize>,
    /// Range `lo,hi` of the per-block AR coefficient.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub r_range: Option<Vec<f64>>,
    /// Measurement SNR in dB.
    #[arg(long, conflicts_with = "noiseless")]
    pub snr: Option<f64>,
    /// Run without measurement noise.
    #[arg(long)]
    pub noiseless: bool,
    /// Algorithms to run, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm)]
    pub algorithms: Option<Vec<Algorithm>>,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[command(flatten)]
    pub run: RunFlags,
    #[command(flatten)]
    pub output: OutputFlags,
}

#[derive(Debug, Clone, Args)]
pub struct DctArgs {
    /// Number of measurements.
    #[arg(long)]
    pub m: Option<usize>,
    /// Signal length.
    #[arg(long)]
    pub n: Option<usize>,
    /// Ones per column of the sparse binary matrix.
    #[arg(long)]
    pub ones: Option<usize>,
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Fixed Block-OMP block budget instead of matching BSBL-FM.
    #[arg(long)]
    pub omp_budget: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_algorithm)]
    pub algorithms: Option<Vec<Algorithm>>,
    #[command(flatten)]
    pub solver: SolverFlags,
    #[command(flatten)]
    pub run: RunFlags,
    #[command(flatten)]
    pub output: OutputFlags,
}

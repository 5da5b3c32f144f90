use thiserror::Error;

/// Errors raised by the model, solver, baselines and experiment generators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BsblError {
    #[error("invalid block partition: {0}")]
    InvalidPartition(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("noise precision must be positive and finite, got {0}")]
    InvalidPrecision(f64),

    #[error("invalid block covariance: {0}")]
    InvalidCovariance(String),

    #[error("{}prior covariance is degenerate ({reason})", block_prefix(*block))]
    DegeneratePrior {
        block: Option<usize>,
        reason: String,
    },

    #[error(
        "covariance of the observations is ill-conditioned (condition estimate {condition:e})"
    )]
    IllConditioned { condition: f64 },

    #[error("numerical degeneracy in {context} (condition estimate {condition:e})")]
    NumericalDegeneracy { context: String, condition: f64 },

    #[error("{}rank-deficient statistics (condition estimate {condition:e})", block_prefix(*block))]
    RankDeficient {
        block: Option<usize>,
        condition: f64,
    },

    #[error("{}leave-one-out deflation failed (condition estimate {condition:e})", block_prefix(*block))]
    DeflationFailure {
        block: Option<usize>,
        condition: f64,
    },

    #[error("correlation template has zero mean diagonal")]
    DegenerateTemplate,

    #[error("candidate relevance {gamma} is not positive")]
    NotRelevant { gamma: f64 },

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("invalid AR coefficient {0}: must satisfy |r| < 1")]
    InvalidCoefficient(f64),

    #[error("invalid input: {0}")]
    InvalidSpec(String),

    #[error("oracle least squares infeasible: {0}")]
    OracleInfeasible(String),

    #[error("rank-deficient column submatrix: {0}")]
    RankDeficientColumns(String),

    #[error("reference signal has zero energy")]
    InvalidReference,

    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),
}

fn block_prefix(block: Option<usize>) -> String {
    block.map(|b| format!("block {b}: ")).unwrap_or_default()
}

impl BsblError {
    /// Attach a block index to errors that name one.
    pub fn at_block(self, index: usize) -> Self {
        match self {
            BsblError::DegeneratePrior { reason, .. } => BsblError::DegeneratePrior {
                block: Some(index),
                reason,
            },
            BsblError::RankDeficient { condition, .. } => BsblError::RankDeficient {
                block: Some(index),
                condition,
            },
            BsblError::DeflationFailure { condition, .. } => BsblError::DeflationFailure {
                block: Some(index),
                condition,
            },
            other => other,
        }
    }

    /// True for errors that come from floating-point degeneracy rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            BsblError::DegeneratePrior { .. }
                | BsblError::IllConditioned { .. }
                | BsblError::NumericalDegeneracy { .. }
                | BsblError::RankDeficient { .. }
                | BsblError::DeflationFailure { .. }
                | BsblError::DegenerateTemplate
                | BsblError::RankDeficientColumns(_)
                | BsblError::InternalInconsistency(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, BsblError>;

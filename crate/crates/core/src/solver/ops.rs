//! Per-block closed-form pieces of the fast marginal-likelihood step.

use nalgebra::{DMatrix, DVector};

use super::{BetaMode, CorrelationModel};
use crate::error::{BsblError, Result};
use crate::experiments::toeplitz_ar;
use crate::linalg::{checked_inverse, symmetrized};
use crate::model::BlockCovariance;

/// Largest admissible magnitude of an estimated AR(1) coefficient.
pub const AR_CLIP: f64 = 0.99;

/// Noise precision from one of the fixed heuristics.
///
/// Noiseless uses `β⁻¹ = 1e-6`; the SNR-scaled modes use `β⁻¹ = 0.1‖y‖²`
/// (below 20 dB) or `β⁻¹ = 0.01‖y‖²` (20 dB and above).
pub fn noise_precision_heuristic(y: &DVector<f64>, mode: BetaMode) -> Result<f64> {
    let scaled = |factor: f64| {
        let energy = y.norm_squared();
        if !(energy > 0.0) || !energy.is_finite() {
            return Err(BsblError::InvalidObservation(
                "SNR-scaled noise heuristic needs a nonzero observation".into(),
            ));
        }
        Ok(1.0 / (factor * energy))
    };
    match mode {
        BetaMode::Fixed(beta) if beta > 0.0 && beta.is_finite() => Ok(beta),
        BetaMode::Fixed(beta) => Err(BsblError::InvalidPrecision(beta)),
        BetaMode::Noiseless => Ok(1e6),
        BetaMode::LowSnr => scaled(0.1),
        BetaMode::HighSnr => scaled(0.01),
    }
}

/// Stationary point of the block cost, `A = s⁻¹(qqᵀ − s)s⁻¹`.
pub fn candidate_covariance(s: &DMatrix<f64>, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    let s_inv = checked_inverse(s).map_err(|condition| BsblError::RankDeficient {
        block: None,
        condition,
    })?;
    let s_inv_q = &s_inv * q;
    Ok(symmetrized(&s_inv_q * s_inv_q.transpose() - s_inv))
}

/// `Tr(A)/d`, the average variance of the block.
pub fn block_relevance(a: &DMatrix<f64>) -> f64 {
    a.trace() / a.nrows() as f64
}

/// AR(1) coefficient `m₁/m₀` of a correlation template, clipped to ±0.99.
///
/// `m₀` is the mean of the main diagonal and `m₁` the mean of the first
/// sub-diagonal. A 1×1 template has no sub-diagonal and gives 0.
pub fn estimate_ar_coefficient(b: &DMatrix<f64>) -> Result<f64> {
    let d = b.nrows();
    if d < 2 {
        return Ok(0.0);
    }
    let m0 = b.diagonal().mean();
    if m0 == 0.0 {
        return Err(BsblError::DegenerateTemplate);
    }
    let m1 = (0..d - 1).map(|j| b[(j + 1, j)]).sum::<f64>() / (d - 1) as f64;
    let ratio = m1 / m0;
    if !ratio.is_finite() {
        return Err(BsblError::DegenerateTemplate);
    }
    Ok(ratio.clamp(-AR_CLIP, AR_CLIP))
}

/// Split a candidate into relevance and template, impose the correlation
/// model on the template and rebuild `A* = γB*`.
pub fn regularize(a_candidate: &DMatrix<f64>, model: CorrelationModel) -> Result<BlockCovariance> {
    let d = a_candidate.nrows();
    let gamma = block_relevance(a_candidate);
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(BsblError::NotRelevant { gamma });
    }
    let template = |r: f64| toeplitz_ar(d, r).expect("coefficient clipped to 0.99");
    let (b, r) = match model {
        CorrelationModel::Sim => (DMatrix::identity(d, d), None),
        CorrelationModel::Ar1 => {
            let r = estimate_ar_coefficient(&(a_candidate / gamma))?;
            (template(r), Some(r))
        }
        CorrelationModel::Ar1Averaged { shared_r } => {
            let r = shared_r.clamp(-AR_CLIP, AR_CLIP);
            (template(r), Some(r))
        }
    };
    BlockCovariance::structured(gamma, b, r)
}

/// Unit-diagonal template `A/γ`: the candidate scaled by its relevance with
/// the diagonal overwritten by ones.
pub fn unit_template(a_candidate: &DMatrix<f64>) -> DMatrix<f64> {
    let gamma = block_relevance(a_candidate);
    let mut b = a_candidate / gamma;
    b.fill_diagonal(1.0);
    b
}

/// Leave-block-out statistics from the full ones:
/// `s = (I − S A)⁻¹ S`, `q = (I − S A)⁻¹ Q`, or `(S, Q)` for an inactive block.
pub fn leave_one_out_stats(
    s_full: &DMatrix<f64>,
    q_full: &DVector<f64>,
    a: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let Some(a) = a else {
        return Ok((s_full.clone(), q_full.clone()));
    };
    let d = s_full.nrows();
    let deflate = DMatrix::identity(d, d) - s_full * a;
    let inv = checked_inverse(&deflate).map_err(|condition| BsblError::DeflationFailure {
        block: None,
        condition,
    })?;
    Ok((symmetrized(&inv * s_full), &inv * q_full))
}

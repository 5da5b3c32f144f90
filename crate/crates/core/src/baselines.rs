//! Non-Bayesian reference estimators: Block-OMP with known block sparsity
//! and least squares on a known support.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BsblError, Result};
use crate::model::{block_columns, MeasurementSystem};
use crate::partition::BlockPartition;

/// Sorted, duplicate-free set of block indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SupportSet {
    blocks: Vec<usize>,
}

impl SupportSet {
    pub fn new(mut blocks: Vec<usize>, g: usize) -> Result<Self> {
        blocks.sort_unstable();
        if blocks.windows(2).any(|w| w[0] == w[1]) {
            return Err(BsblError::InvalidSpec("duplicate block in support".into()));
        }
        if let Some(&b) = blocks.last() {
            if b >= g {
                return Err(BsblError::InvalidSpec(format!(
                    "support block {b} outside [0, {g})"
                )));
            }
        }
        Ok(Self { blocks })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn contains(&self, block: usize) -> bool {
        self.blocks.binary_search(&block).is_ok()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Least-squares coefficients of `y` on the columns of `a`, which must have
/// full column rank.
fn full_rank_lstsq(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
) -> std::result::Result<DVector<f64>, String> {
    let (m, k) = a.shape();
    if k == 0 {
        return Ok(DVector::zeros(0));
    }
    if k > m {
        return Err(format!("{k} columns exceed {m} rows"));
    }
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let tol = m.max(k) as f64 * f64::EPSILON * s_max;
    if !(s_min > tol) {
        return Err(format!("smallest singular value {s_min:e} below {tol:e}"));
    }
    svd.solve(y, 0.0).map_err(|e| e.to_string())
}

fn scatter(partition: &BlockPartition, blocks: &[usize], coef: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(partition.len());
    let mut pos = 0;
    for &b in blocks {
        let d = partition.size(b);
        x.rows_mut(partition.offset(b), d)
            .copy_from(&coef.rows(pos, d));
        pos += d;
    }
    x
}

/// Block-OMP run with its selection order and residual history.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOmpRun {
    pub x: DVector<f64>,
    /// Blocks in the order they were selected.
    pub selected: Vec<usize>,
    /// Residual norm before the first step and after each step.
    pub residual_norms: Vec<f64>,
}

/// Greedy block selection by `‖Φ_iᵀ r‖₂`, re-projecting `y` on all selected
/// blocks after each step.
pub fn block_omp_run(
    system: &MeasurementSystem,
    partition: &BlockPartition,
    k_blocks: usize,
) -> Result<BlockOmpRun> {
    system.check_partition(partition)?;
    let g = partition.num_blocks();
    if k_blocks == 0 || k_blocks > g {
        return Err(BsblError::InvalidSpec(format!(
            "block budget {k_blocks} must be in 1..={g}"
        )));
    }
    let phi = system.phi();
    for i in 0..g {
        if phi.columns(partition.offset(i), partition.size(i)).norm() == 0.0 {
            return Err(BsblError::InvalidSpec(format!(
                "block {i} has all-zero columns"
            )));
        }
    }
    let y = system.y();
    let mut residual = y.clone();
    let mut selected: Vec<usize> = Vec::with_capacity(k_blocks);
    let mut residual_norms = vec![residual.norm()];
    let mut coef = DVector::zeros(0);

    for _ in 0..k_blocks {
        if residual.norm() == 0.0 {
            break;
        }
        let correlation = phi.tr_mul(&residual);
        let best = (0..g)
            .filter(|i| !selected.contains(i))
            .map(|i| {
                (
                    i,
                    correlation
                        .rows(partition.offset(i), partition.size(i))
                        .norm(),
                )
            })
            .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((i, v)),
            });
        let Some((block, _)) = best else { break };
        selected.push(block);
        let phi_s = block_columns(phi, partition, &selected);
        coef = full_rank_lstsq(&phi_s, y)
            .map_err(|e| BsblError::RankDeficientColumns(format!("blocks {selected:?}: {e}")))?;
        residual = y - &phi_s * &coef;
        residual_norms.push(residual.norm());
    }
    let x = if selected.is_empty() {
        DVector::zeros(partition.len())
    } else {
        scatter(partition, &selected, &coef)
    };
    Ok(BlockOmpRun {
        x,
        selected,
        residual_norms,
    })
}

/// Block-OMP estimate with a budget of `k_blocks` blocks.
pub fn block_omp(
    system: &MeasurementSystem,
    partition: &BlockPartition,
    k_blocks: usize,
) -> Result<DVector<f64>> {
    block_omp_run(system, partition, k_blocks).map(|run| run.x)
}

/// Least-squares fit of `y` restricted to the columns of `support`.
pub fn oracle_ls(
    system: &MeasurementSystem,
    partition: &BlockPartition,
    support: &SupportSet,
) -> Result<DVector<f64>> {
    system.check_partition(partition)?;
    if let Some(&b) = support.blocks().last() {
        if b >= partition.num_blocks() {
            return Err(BsblError::OracleInfeasible(format!(
                "support block {b} out of range"
            )));
        }
    }
    let phi_s = block_columns(system.phi(), partition, support.blocks());
    let coef = full_rank_lstsq(&phi_s, system.y()).map_err(BsblError::OracleInfeasible)?;
    Ok(scatter(partition, support.blocks(), &coef))
}

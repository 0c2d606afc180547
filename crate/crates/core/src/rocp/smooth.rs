//! Differentiable relaxations of the conformal threshold and of set membership.
//!
//! Soft ranks use pairwise sigmoids with dispersion `δ`; the smooth quantile
//! is a softmax-weighted average of the scores, weighting each score by how
//! close its soft rank is to the target rank. Both collapse to hard sorting
//! as `δ → 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RocpError};
use crate::tensor::{Tape, Var};

/// Soft ranks of a score vector: `1 + Σ_{j≠i} σ((s_i − s_j)/δ)`.
pub fn soft_rank(tape: &mut Tape, scores: Var, dispersion: f64) -> Result<Var> {
    tape.soft_rank(scores, dispersion)
}

/// Differentiable `level`-quantile of a `p × 1` score column.
///
/// Returns a `1 × 1` var `Σ_i w_i s_i` with
/// `w = softmax_i(−(rank_i − level·(p+1))² / δ)`.
pub fn smooth_quantile(tape: &mut Tape, scores: Var, level: f64, dispersion: f64) -> Result<Var> {
    let (p, cols) = tape.shape(scores);
    if p == 0 || cols != 1 {
        return Err(RocpError::InvalidArgument(format!(
            "smooth_quantile expects a non-empty column, got {p}x{cols}"
        )));
    }
    if dispersion.is_nan() || dispersion <= 0.0 {
        return Err(RocpError::InvalidArgument(format!(
            "dispersion must be positive, got {dispersion}"
        )));
    }
    let target = level * (p + 1) as f64;
    let ranks = tape.soft_rank(scores, dispersion)?;
    let offset = tape.add_const(ranks, -target);
    let sq = tape.mul(offset, offset)?;
    let logits = tape.scale(sq, -1.0 / dispersion);
    let row = tape.transpose(logits);
    let weights = tape.softmax_rows(row);
    tape.matmul(weights, scores)
}

/// Sigmoid relaxation of `score ≥ threshold`: `σ((score − threshold)/T)`.
pub fn soft_membership(tape: &mut Tape, scores: Var, threshold: Var, temperature: f64) -> Result<Var> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(RocpError::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let neg = tape.scale(threshold, -1.0);
    let shifted = tape.add_scalar(scores, neg)?;
    let scaled = tape.scale(shifted, 1.0 / temperature);
    Ok(tape.sigmoid(scaled))
}

/// Form of the size penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeLossKind {
    /// Mean over rows of `(1/K) Σ_k (C_k − τ)`; negative when sets are below `τ·K`.
    #[default]
    Linear,
    /// Mean over rows of `max(0, (1/K) Σ_k (C_k − τ))`.
    Clamped,
}

/// Relaxed set-size penalty over an `m × K` membership matrix.
pub fn size_loss(tape: &mut Tape, memberships: Var, tau: f64, kind: SizeLossKind) -> Result<Var> {
    match kind {
        SizeLossKind::Linear => {
            let mean = tape.reduce_mean(memberships)?;
            Ok(tape.add_const(mean, -tau))
        }
        SizeLossKind::Clamped => {
            let per_row = tape.row_mean(memberships)?;
            let shifted = tape.add_const(per_row, -tau);
            let hinge = tape.relu(shifted);
            tape.reduce_mean(hinge)
        }
    }
}

/// Size-penalty term of the training objective.
#[derive(Debug, Clone, Copy)]
pub struct SizeTerm {
    pub memberships: Var,
    pub lambda: f64,
    pub tau: f64,
    pub kind: SizeLossKind,
}

/// Losses recorded by [`rocp_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub cross_entropy: Var,
    pub size: Option<Var>,
}

/// Cross-entropy on `train_rows` plus `λ ·` size loss when a size term is given.
pub fn rocp_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    train_rows: &[usize],
    size_term: Option<SizeTerm>,
) -> Result<LossVars> {
    let ce = tape.masked_cross_entropy(logits, labels, train_rows)?;
    match size_term {
        Some(term) if term.lambda != 0.0 => {
            let size = size_loss(tape, term.memberships, term.tau, term.kind)?;
            let weighted = tape.scale(size, term.lambda);
            let total = tape.add(ce, weighted)?;
            Ok(LossVars {
                total,
                cross_entropy: ce,
                size: Some(size),
            })
        }
        _ => Ok(LossVars {
            total: ce,
            cross_entropy: ce,
            size: None,
        }),
    }
}

//! Conformal-aware training: smooth thresholds, soft prediction sets and the
//! size-penalized objective.

mod smooth;
mod train;

pub use smooth::{
    rocp_loss, size_loss, smooth_quantile, soft_membership, soft_rank, LossVars, SizeLossKind, SizeTerm,
};
pub use train::{epoch_objective, train, EpochLoss, SmoothingConfig, TrainReport};

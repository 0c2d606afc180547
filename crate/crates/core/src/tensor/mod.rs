//! Dense and sparse matrices, a reverse-mode tape, and the Adam optimizer.

mod adam;
mod matrix;
mod sparse;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use matrix::Matrix;
pub use sparse::SparseMatrix;
pub use tape::{attention_weights, soft_rank_values, softmax_rows, Gradients, Tape, Var};

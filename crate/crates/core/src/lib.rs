//! Graph neural network training with conformal prediction in the loss, and
//! post-hoc split conformal prediction.

pub mod checkpoint;
pub mod conformal;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod models;
pub mod parallel;
pub mod rocp;
pub mod seeds;
pub mod tensor;

pub use conformal::{calibrate_predict, CpMethod, PredictionSet, Threshold};
pub use error::{Result, RocpError};
pub use graph::{GraphDataset, SplitAssignment};
pub use models::{Arch, GraphInputs, Model, ModelConfig};
pub use rocp::{train, SmoothingConfig, TrainReport};
pub use tensor::{Matrix, SparseMatrix, Tape};

//! Graph container, dataset directory format, splits, and synthetic graphs.

mod dataset;
mod propagation;
mod sbm;
mod splits;

pub use dataset::{load_dataset, write_dataset, DatasetMeta, GraphDataset};
pub use propagation::{homophily, neighbor_mean_operator, normalize, with_self_loops, NormalizedAdjacency};
pub use sbm::{generate_sbm, SbmConfig};
pub use splits::{
    calib_size, make_splits, partition_valid, split_pool, SplitAssignment, SplitFile, MAX_CALIB,
};

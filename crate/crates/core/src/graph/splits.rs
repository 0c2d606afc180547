use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RocpError};
use crate::graph::GraphDataset;

/// Upper bound on the calibration set drawn from the calibration/test pool.
pub const MAX_CALIB: usize = 1000;

/// Disjoint node sets for the transductive protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

/// On-disk form of fixed splits: the calibration/test pool is kept unsplit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub pool: Vec<usize>,
}

/// Calibration set size for a pool: `min(1000, ⌊pool/2⌋)`.
pub fn calib_size(pool: usize) -> usize {
    MAX_CALIB.min(pool / 2)
}

impl SplitAssignment {
    /// Nodes available for calibration and testing.
    pub fn pool(&self) -> Vec<usize> {
        let mut p = self.calib.clone();
        p.extend_from_slice(&self.test);
        p.sort_unstable();
        p
    }

    pub fn to_file(&self) -> SplitFile {
        SplitFile {
            train: self.train.clone(),
            valid: self.valid.clone(),
            pool: self.pool(),
        }
    }

    /// Checks pairwise disjointness and range.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for &v in self.train.iter().chain(&self.valid).chain(&self.calib).chain(&self.test) {
            if v >= n {
                return Err(RocpError::InvalidArgument(format!("split node {v} outside [0, {n})")));
            }
            if !seen.insert(v) {
                return Err(RocpError::InvalidArgument(format!("node {v} appears in two splits")));
            }
        }
        Ok(())
    }
}

/// Shuffles the pool with `seed` and splits it by the calibration-size rule.
pub fn split_pool(pool: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = pool.to_vec();
    shuffled.sort_unstable();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(calib_size(pool.len()));
    (shuffled, test)
}

impl SplitFile {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(RocpError::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Expands into a full assignment by splitting the pool with `seed`.
    pub fn assign(&self, seed: u64) -> SplitAssignment {
        let (calib, test) = split_pool(&self.pool, seed);
        SplitAssignment {
            train: self.train.clone(),
            valid: self.valid.clone(),
            calib,
            test,
        }
    }
}

/// Draws `per_class_train` nodes of every class for training, `valid_size` further
/// nodes for validation, and splits the remainder into calibration and test.
pub fn make_splits(
    g: &GraphDataset,
    per_class_train: usize,
    valid_size: usize,
    seed: u64,
) -> Result<SplitAssignment> {
    let n = g.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut taken = vec![0usize; g.num_classes()];
    let mut train = Vec::with_capacity(per_class_train * g.num_classes());
    let mut rest = Vec::with_capacity(n);
    for &v in &order {
        let c = g.labels()[v];
        if taken[c] < per_class_train {
            taken[c] += 1;
            train.push(v);
        } else {
            rest.push(v);
        }
    }
    if let Some((c, &have)) = taken.iter().enumerate().find(|&(_, &t)| t < per_class_train) {
        return Err(RocpError::InsufficientNodes(format!(
            "class {c} has {have} nodes, {per_class_train} needed for training"
        )));
    }
    if rest.len() < valid_size + 2 {
        return Err(RocpError::InsufficientNodes(format!(
            "{} nodes left after training split; need {valid_size} for validation and 2 for calibration/test",
            rest.len()
        )));
    }
    let mut pool = rest.split_off(valid_size);
    let valid = rest;
    let test = pool.split_off(calib_size(pool.len()));
    let calib = pool;
    train.sort_unstable();
    Ok(SplitAssignment {
        train,
        valid,
        calib,
        test,
    })
}

/// Splits `valid` into an in-training calibration part of size `round(calib_frac·|valid|)`
/// and a prediction part holding the rest.
///
/// A positive fraction always yields at least one calibration node and, when
/// `|valid| ≥ 2`, at least one prediction node.
pub fn partition_valid<R: Rng + ?Sized>(
    valid: &[usize],
    calib_frac: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&calib_frac) {
        return Err(RocpError::InvalidArgument(format!(
            "calib_frac {calib_frac} outside [0, 1)"
        )));
    }
    if valid.is_empty() {
        return Err(RocpError::Empty("validation set"));
    }
    if calib_frac == 0.0 {
        return Ok((Vec::new(), valid.to_vec()));
    }
    let mut size = (calib_frac * valid.len() as f64).round() as usize;
    size = size.max(1);
    if valid.len() >= 2 {
        size = size.min(valid.len() - 1);
    }
    let mut shuffled = valid.to_vec();
    shuffled.shuffle(rng);
    let pred = shuffled.split_off(size);
    Ok((shuffled, pred))
}

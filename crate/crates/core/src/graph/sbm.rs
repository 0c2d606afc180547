use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, RocpError};
use crate::graph::GraphDataset;
use crate::tensor::Matrix;

/// Parameters of a planted-partition stochastic block model with Gaussian features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbmConfig {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub features: usize,
    /// Norm of each class-mean vector; noise is unit-variance per coordinate.
    pub feature_signal: f64,
    pub seed: u64,
}

/// Samples a graph with balanced classes.
///
/// Node `i` belongs to class `i * K / n`. Each pair is joined with probability
/// `p_in` inside a class and `p_out` across classes. Features are the node's
/// class mean (a random direction of norm `feature_signal`) plus standard
/// Gaussian noise.
pub fn generate_sbm(cfg: &SbmConfig) -> Result<GraphDataset> {
    let SbmConfig {
        nodes: n,
        classes: k,
        p_in,
        p_out,
        features: d,
        feature_signal,
        seed,
    } = *cfg;
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) || p_out > p_in {
        return Err(RocpError::InvalidArgument(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}"
        )));
    }
    if k == 0 || n < k {
        return Err(RocpError::InvalidArgument(format!(
            "need nodes >= classes >= 1, got {n} nodes and {k} classes"
        )));
    }
    if d == 0 {
        return Err(RocpError::InvalidArgument("feature dimension must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|i| i * k / n).collect();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }

    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm * feature_signal).collect()
        })
        .collect();
    let mut feats = Matrix::zeros(n, d);
    for i in 0..n {
        for (f, &m) in feats.row_mut(i).iter_mut().zip(&means[labels[i]]) {
            let noise: f64 = rng.sample(StandardNormal);
            *f = m + noise;
        }
    }

    let (g, _) = GraphDataset::from_edges(format!("sbm-{n}-{k}-{seed}"), &edges, feats, labels, k)?;
    Ok(g)
}

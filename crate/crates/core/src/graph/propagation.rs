use std::sync::Arc;

use crate::graph::GraphDataset;
use crate::tensor::SparseMatrix;

/// Symmetric propagation operator `D̂^{-1/2}(A+I)D̂^{-1/2}`.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency(Arc<SparseMatrix>);

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &Arc<SparseMatrix> {
        &self.0
    }
}

/// Adds self-loops and normalizes symmetrically by the resulting degrees.
pub fn normalize(g: &GraphDataset) -> NormalizedAdjacency {
    let adj = g.adjacency();
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / ((adj.row_nnz(i) + 1) as f64).sqrt())
        .collect();
    let mut triplets = Vec::with_capacity(adj.nnz() + n);
    for i in 0..n {
        triplets.push((i, i, inv_sqrt[i] * inv_sqrt[i]));
        for &j in adj.row(i).0 {
            triplets.push((i, j, inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    let m = SparseMatrix::from_triplets(n, n, &triplets).expect("normalized adjacency is well formed");
    NormalizedAdjacency(Arc::new(m))
}

/// Row-averaging operator over neighbors, self excluded. Rows of isolated nodes are empty.
pub fn neighbor_mean_operator(g: &GraphDataset) -> Arc<SparseMatrix> {
    let adj = g.adjacency();
    let mut triplets = Vec::with_capacity(adj.nnz());
    for i in 0..g.num_nodes() {
        let nbrs = adj.row(i).0;
        let w = 1.0 / nbrs.len().max(1) as f64;
        triplets.extend(nbrs.iter().map(|&j| (i, j, w)));
    }
    Arc::new(SparseMatrix::from_triplets(g.num_nodes(), g.num_nodes(), &triplets).expect("valid structure"))
}

/// Attention neighborhoods: the adjacency pattern plus a self-loop on every node.
pub fn with_self_loops(g: &GraphDataset) -> Arc<SparseMatrix> {
    let adj = g.adjacency();
    let mut triplets = Vec::with_capacity(adj.nnz() + g.num_nodes());
    for i in 0..g.num_nodes() {
        triplets.push((i, i, 1.0));
        triplets.extend(adj.row(i).0.iter().map(|&j| (i, j, 1.0)));
    }
    Arc::new(SparseMatrix::from_triplets(g.num_nodes(), g.num_nodes(), &triplets).expect("valid structure"))
}

/// Mean over nodes of the fraction of neighbors sharing the node's label.
///
/// Nodes without neighbors contribute 0.
pub fn homophily(g: &GraphDataset) -> f64 {
    let n = g.num_nodes();
    if n == 0 {
        return 0.0;
    }
    let labels = g.labels();
    let total: f64 = (0..n)
        .map(|v| {
            let nbrs = g.neighbors(v);
            if nbrs.is_empty() {
                0.0
            } else {
                let same = nbrs.iter().filter(|&&u| labels[u] == labels[v]).count();
                same as f64 / nbrs.len() as f64
            }
        })
        .sum();
    total / n as f64
}

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RocpError};
use crate::io::atomic_write;
use crate::tensor::{Matrix, SparseMatrix};

/// Undirected node-classification graph.
///
/// The adjacency is stored symmetrically with unit weights and without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    adjacency: SparseMatrix,
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub directed: bool,
}

impl GraphDataset {
    /// Builds a dataset from undirected edges. Both orientations of an edge count as
    /// the same edge; duplicates and self-loops are dropped and counted in the second
    /// element of the result.
    pub fn from_edges(
        name: impl Into<String>,
        edges: &[(usize, usize)],
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<(Self, usize)> {
        let n = labels.len();
        if features.rows() != n {
            return Err(RocpError::CountMismatch {
                what: "feature rows",
                expected: n,
                found: features.rows(),
            });
        }
        for (node, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(RocpError::LabelOutOfRange {
                    node,
                    label,
                    classes: num_classes,
                });
            }
        }
        let mut unique = BTreeSet::new();
        let mut dropped = 0;
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(RocpError::InvalidArgument(format!(
                    "edge ({a}, {b}) references a node outside [0, {n})"
                )));
            }
            if a == b || !unique.insert((a.min(b), a.max(b))) {
                dropped += 1;
            }
        }
        let mut triplets = Vec::with_capacity(unique.len() * 2);
        for &(a, b) in &unique {
            triplets.push((a, b, 1.0));
            triplets.push((b, a, 1.0));
        }
        let adjacency = SparseMatrix::from_triplets(n, n, &triplets)?;
        Ok((
            Self {
                name: name.into(),
                adjacency,
                features,
                labels,
                num_classes,
            },
            dropped,
        ))
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of stored directed entries, i.e. twice the undirected edge count.
    pub fn num_directed_edges(&self) -> usize {
        self.adjacency.nnz()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        self.adjacency.row(v).0
    }

    /// Undirected edges as `(low, high)` pairs in ascending order.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.adjacency.nnz() / 2);
        for i in 0..self.num_nodes() {
            for &j in self.neighbors(i) {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            num_nodes: self.num_nodes(),
            num_features: self.num_features(),
            num_classes: self.num_classes,
            directed: false,
        }
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(RocpError::InvalidArgument("not a permutation".into()));
        }
        let edges: Vec<_> = self
            .undirected_edges()
            .into_iter()
            .map(|(a, b)| (perm[a], perm[b]))
            .collect();
        let mut features = Matrix::zeros(n, self.num_features());
        let mut labels = vec![0; n];
        for i in 0..n {
            features.row_mut(perm[i]).copy_from_slice(self.features.row(i));
            labels[perm[i]] = self.labels[i];
        }
        Ok(Self::from_edges(self.name.clone(), &edges, features, labels, self.num_classes)?.0)
    }
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(RocpError::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

fn malformed(file: &str, line: usize, msg: impl Into<String>) -> RocpError {
    RocpError::Malformed {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_pairs(text: &str, file: &str, header: &str) -> Result<Vec<(usize, usize)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((_, h)) => return Err(malformed(file, 1, format!("expected header `{header}`, got `{h}`"))),
        None => return Err(malformed(file, 1, "empty file")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = |s: Option<&str>| -> Result<usize> {
            s.map(str::trim)
                .ok_or_else(|| malformed(file, i + 1, "expected two columns"))?
                .parse()
                .map_err(|e| malformed(file, i + 1, format!("{e}")))
        };
        let a = parse(parts.next())?;
        let b = parse(parts.next())?;
        if parts.next().is_some() {
            return Err(malformed(file, i + 1, "expected two columns"));
        }
        out.push((a, b));
    }
    Ok(out)
}

/// Reads a dataset directory (`meta.json`, `edges.csv`, `features.bin`, `labels.csv`).
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<GraphDataset> {
    let dir = dir.as_ref();
    let meta: DatasetMeta = serde_json::from_str(&read_text(&dir.join("meta.json"))?)?;
    let n = meta.num_nodes;
    let d = meta.num_features;

    let edges = parse_pairs(&read_text(&dir.join("edges.csv"))?, "edges.csv", "src,dst")?;
    for (line, &(a, b)) in edges.iter().enumerate() {
        if a >= n || b >= n {
            return Err(malformed(
                "edges.csv",
                line + 2,
                format!("edge ({a}, {b}) outside [0, {n})"),
            ));
        }
    }

    let feat_path = dir.join("features.bin");
    if !feat_path.exists() {
        return Err(RocpError::MissingFile(feat_path));
    }
    let bytes = fs::read(&feat_path)?;
    if bytes.len() != n * d * 4 {
        return Err(RocpError::CountMismatch {
            what: "feature values",
            expected: n * d,
            found: bytes.len() / 4,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let features = Matrix::from_vec(n, d, values)?;

    let pairs = parse_pairs(&read_text(&dir.join("labels.csv"))?, "labels.csv", "node,label")?;
    if pairs.len() != n {
        return Err(RocpError::CountMismatch {
            what: "label rows",
            expected: n,
            found: pairs.len(),
        });
    }
    let mut labels = vec![usize::MAX; n];
    for (line, &(node, label)) in pairs.iter().enumerate() {
        if node >= n {
            return Err(malformed("labels.csv", line + 2, format!("node {node} outside [0, {n})")));
        }
        if labels[node] != usize::MAX {
            return Err(malformed("labels.csv", line + 2, format!("duplicate node {node}")));
        }
        if label >= meta.num_classes {
            return Err(RocpError::LabelOutOfRange {
                node,
                label,
                classes: meta.num_classes,
            });
        }
        labels[node] = label;
    }

    let (g, dropped) = GraphDataset::from_edges(meta.name, &edges, features, labels, meta.num_classes)?;
    if dropped > 0 {
        log::info!("{}: removed {dropped} duplicate or self-loop edges", g.name);
    }
    Ok(g)
}

/// Writes `g` in the directory format read by [`load_dataset`].
///
/// Features are stored as 32-bit floats, so a round trip is exact only for
/// features representable in `f32`.
pub fn write_dataset(g: &GraphDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut meta = serde_json::to_string_pretty(&g.meta())?;
    meta.push('\n');
    atomic_write(&dir.join("meta.json"), meta.as_bytes())?;

    let mut edges = String::from("src,dst\n");
    for (a, b) in g.undirected_edges() {
        edges.push_str(&format!("{a},{b}\n"));
    }
    atomic_write(&dir.join("edges.csv"), edges.as_bytes())?;

    let mut feats = Vec::with_capacity(g.features.len() * 4);
    for &v in g.features.as_slice() {
        feats.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(&dir.join("features.bin"), &feats)?;

    let mut labels = String::from("node,label\n");
    for (i, l) in g.labels.iter().enumerate() {
        labels.push_str(&format!("{i},{l}\n"));
    }
    atomic_write(&dir.join("labels.csv"), labels.as_bytes())?;
    Ok(())
}

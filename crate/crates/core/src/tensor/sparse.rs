use crate::error::{Result, RocpError};
use crate::tensor::Matrix;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 || row_offsets[0] != 0 {
            return Err(RocpError::InvalidArgument(
                "row offsets must have rows + 1 entries starting at 0".into(),
            ));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(RocpError::InvalidArgument(
                "row offsets must be nondecreasing".into(),
            ));
        }
        let nnz = *row_offsets.last().unwrap();
        if col_indices.len() != nnz || values.len() != nnz {
            return Err(RocpError::InvalidArgument(format!(
                "expected {nnz} stored entries, got {} indices and {} values",
                col_indices.len(),
                values.len()
            )));
        }
        if let Some(&c) = col_indices.iter().find(|&&c| c >= cols) {
            return Err(RocpError::InvalidArgument(format!(
                "column index {c} out of range for {cols} columns"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RocpError::InvalidArgument("non-finite stored value".into()));
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if r >= rows {
                return Err(RocpError::InvalidArgument(format!(
                    "row index {r} out of range for {rows} rows"
                )));
            }
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self::new(rows, cols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_offsets: vec![0; rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[s..e], &self.values[s..e])
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.iter()
            .position(|&c| c == j)
            .map_or(0.0, |p| vals[p])
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m.set(i, c, m.get(i, c) + v);
            }
        }
        m
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                triplets.push((c, i, v));
            }
        }
        SparseMatrix::from_triplets(self.cols, self.rows, &triplets)
            .expect("transpose of a valid matrix is valid")
    }

    /// Sparse-dense product `self · d`.
    pub fn spmm(&self, d: &Matrix) -> Result<Matrix> {
        if self.cols != d.rows() {
            return Err(RocpError::Shape {
                op: "spmm",
                lhs: self.shape(),
                rhs: d.shape(),
            });
        }
        let k = d.cols();
        let mut out = Matrix::zeros(self.rows, k);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let o = out.row_mut(i);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &x) in o.iter_mut().zip(d.row(c)) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · d`, used for the backward pass of [`SparseMatrix::spmm`].
    pub fn t_spmm(&self, d: &Matrix) -> Matrix {
        debug_assert_eq!(self.rows, d.rows());
        let k = d.cols();
        let mut out = Matrix::zeros(self.cols, k);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            let src = d.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &x) in out.row_mut(c).iter_mut().zip(src) {
                    *o += v * x;
                }
            }
        }
        out
    }
}

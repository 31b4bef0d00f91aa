//! Sparse vectors and compressed sparse column storage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Borrowed view of a sparse vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseView<'a> {
    pub dim: usize,
    pub indices: &'a [usize],
    pub values: &'a [f64],
}

impl<'a> SparseView<'a> {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn to_owned(&self) -> SparseVec {
        SparseVec {
            dim: self.dim,
            indices: self.indices.to_vec(),
            values: self.values.to_vec(),
        }
    }

    pub fn squared_distance(&self, other: &SparseView<'_>) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.indices.len() || b < other.indices.len() {
            let ia = self.indices.get(a).copied().unwrap_or(usize::MAX);
            let ib = other.indices.get(b).copied().unwrap_or(usize::MAX);
            let d = match ia.cmp(&ib) {
                std::cmp::Ordering::Less => {
                    a += 1;
                    self.values[a - 1]
                }
                std::cmp::Ordering::Greater => {
                    b += 1;
                    other.values[b - 1]
                }
                std::cmp::Ordering::Equal => {
                    a += 1;
                    b += 1;
                    self.values[a - 1] - other.values[b - 1]
                }
            };
            acc += d * d;
        }
        acc
    }
}

/// Owned sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub dim: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn new(dim: usize, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) || indices.last().is_some_and(|&i| i >= dim) {
            return Err(Error::Shape("indices must be increasing and below dim".into()));
        }
        Ok(SparseVec { dim, indices, values })
    }

    /// Keep the nonzero entries of a dense slice.
    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .unzip();
        SparseVec {
            dim: dense.len(),
            indices,
            values,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        SparseVec {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn view(&self) -> SparseView<'_> {
        SparseView {
            dim: self.dim,
            indices: &self.indices,
            values: &self.values,
        }
    }
}

/// Column-compressed sparse matrix with optional column labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CscMatrix {
    pub n_rows: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn from_columns<'a>(n_rows: usize, columns: impl IntoIterator<Item = SparseView<'a>>) -> Result<Self> {
        let mut m = CscMatrix {
            n_rows,
            col_ptr: vec![0],
            row_idx: Vec::new(),
            values: Vec::new(),
        };
        for col in columns {
            if col.dim != n_rows {
                return Err(Error::Shape(format!("column of dim {} in {n_rows}-row matrix", col.dim)));
            }
            m.row_idx.extend_from_slice(col.indices);
            m.values.extend_from_slice(col.values);
            m.col_ptr.push(m.row_idx.len());
        }
        Ok(m)
    }

    pub fn n_cols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn column(&self, i: usize) -> SparseView<'_> {
        let r = self.col_ptr[i]..self.col_ptr[i + 1];
        SparseView {
            dim: self.n_rows,
            indices: &self.row_idx[r.clone()],
            values: &self.values[r],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.col_ptr.first() != Some(&0)
            || self.col_ptr.windows(2).any(|w| w[0] > w[1])
            || self.col_ptr.last() != Some(&self.row_idx.len())
            || self.row_idx.len() != self.values.len()
        {
            return Err(Error::Format("inconsistent CSC pointers".into()));
        }
        for i in 0..self.n_cols() {
            let c = self.column(i);
            if c.indices.windows(2).any(|w| w[0] >= w[1]) || c.indices.last().is_some_and(|&r| r >= self.n_rows) {
                return Err(Error::Format(format!("column {i} has invalid row indices")));
            }
        }
        Ok(())
    }
}

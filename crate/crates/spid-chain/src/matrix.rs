use std::collections::BTreeMap;
use std::fmt::Debug;

use num_traits::{PrimInt, Signed};
use thiserror::Error;

/// Exact signed integer type usable for token arithmetic and coded shards.
pub trait Scalar: PrimInt + Signed + Debug + Default + Send + Sync + 'static {}

impl<T> Scalar for T where T: PrimInt + Signed + Debug + Default + Send + Sync + 'static {}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch: expected {expected:?}, found {found:?}")]
pub struct ShapeError {
    pub expected: (usize, usize),
    pub found: (usize, usize),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError {
                expected: (rows, cols),
                found: (data.len() / cols.max(1), cols),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Panics if the rows are ragged.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row);
        }
        Matrix {
            rows: r,
            cols: c,
            data,
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

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }

    fn check(&self, other: &Self) -> Result<(), ShapeError> {
        if self.shape() != other.shape() {
            return Err(ShapeError {
                expected: self.shape(),
                found: other.shape(),
            });
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), ShapeError> {
        self.check(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &Self) -> Result<(), ShapeError> {
        self.check(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a - b;
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, ShapeError> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, ShapeError> {
        let mut out = self.clone();
        out.sub_assign(other)?;
        Ok(out)
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows)
            .map(|r| self.row(r).iter().fold(T::zero(), |a, &b| a + b))
            .collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o = *o + v;
            }
        }
        out
    }

    /// Rows `start..start+count`, zero-filled past the end.
    pub fn row_slice(&self, start: usize, count: usize) -> Self {
        let mut out = Matrix::zeros(count, self.cols);
        let avail = self.rows.saturating_sub(start).min(count);
        if avail > 0 {
            let s = start * self.cols;
            out.data[..avail * self.cols].copy_from_slice(&self.data[s..s + avail * self.cols]);
        }
        out
    }

    /// Stack matrices vertically; all must share the column count.
    pub fn vstack(parts: &[Matrix<T>]) -> Result<Self, ShapeError> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(ShapeError {
                    expected: (p.rows, cols),
                    found: p.shape(),
                });
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Matrix { rows, cols, data })
    }
}

/// Square matrix stored as a map of nonzero entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SparseMatrix<T> {
    dim: usize,
    entries: BTreeMap<(usize, usize), T>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn new(dim: usize) -> Self {
        SparseMatrix {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.entries.get(&(r, c)).copied().unwrap_or_else(T::zero)
    }

    /// Adds `v` at `(r, c)`; zero results are dropped from storage.
    pub fn add(&mut self, r: usize, c: usize, v: T) {
        assert!(r < self.dim && c < self.dim, "index out of range");
        let e = self.entries.entry((r, c)).or_insert_with(T::zero);
        *e = *e + v;
        if e.is_zero() {
            self.entries.remove(&(r, c));
        }
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        assert!(r < self.dim && c < self.dim, "index out of range");
        if v.is_zero() {
            self.entries.remove(&(r, c));
        } else {
            self.entries.insert((r, c), v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.entries.iter().map(|(&(r, c), &v)| (r, c, v))
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn row_sum(&self, r: usize) -> T {
        self.entries
            .range((r, 0)..(r + 1, 0))
            .fold(T::zero(), |a, (_, &v)| a + v)
    }

    pub fn clear_row(&mut self, r: usize) {
        let keys: Vec<_> = self
            .entries
            .range((r, 0)..(r + 1, 0))
            .map(|(k, _)| *k)
            .collect();
        for k in keys {
            self.entries.remove(&k);
        }
    }

    pub fn nonzero_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.entries.keys().map(|&(r, _)| r).collect();
        rows.dedup();
        rows
    }

    pub fn min_entry(&self) -> Option<T> {
        self.entries.values().copied().min()
    }

    pub fn add_into(&self, dense: &mut Matrix<T>) {
        for (r, c, v) in self.iter() {
            let cur = dense.get(r, c);
            dense.set(r, c, cur + v);
        }
    }

    pub fn sub_from(&self, dense: &mut Matrix<T>) {
        for (r, c, v) in self.iter() {
            let cur = dense.get(r, c);
            dense.set(r, c, cur - v);
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.dim, self.dim);
        self.add_into(&mut m);
        m
    }

    pub fn from_dense(m: &Matrix<T>) -> Self {
        assert_eq!(m.rows(), m.cols(), "square matrix required");
        let mut s = SparseMatrix::new(m.rows());
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                s.set(r, c, m.get(r, c));
            }
        }
        s
    }
}

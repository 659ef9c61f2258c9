//! Compressed sparse row storage for nonnegative weight matrices.

use thiserror::Error;

use crate::dense::DenseMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("row pointer array has length {got}, expected {expected}")]
    IndptrLength { got: usize, expected: usize },
    #[error("row pointers are not monotone or do not end at nnz")]
    IndptrOrder,
    #[error("index and value arrays differ in length ({indices} vs {values})")]
    LengthMismatch { indices: usize, values: usize },
    #[error("row {row}: column {col} out of range for {ncols} columns")]
    ColumnOutOfRange { row: usize, col: usize, ncols: usize },
    #[error("row {row}: column indices not strictly increasing")]
    UnsortedRow { row: usize },
    #[error("row {row}, column {col}: stored value {value} is not a positive finite number")]
    BadValue { row: usize, col: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Validates shape, strictly increasing columns per row, and strictly
    /// positive finite values.
    pub fn try_new(
        nrows: usize,
        ncols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        if indptr.len() != nrows + 1 {
            return Err(SparseError::IndptrLength { got: indptr.len(), expected: nrows + 1 });
        }
        if indices.len() != values.len() {
            return Err(SparseError::LengthMismatch { indices: indices.len(), values: values.len() });
        }
        if indptr[0] != 0 || indptr.windows(2).any(|w| w[0] > w[1]) || indptr[nrows] != indices.len() {
            return Err(SparseError::IndptrOrder);
        }
        for row in 0..nrows {
            let (s, e) = (indptr[row], indptr[row + 1]);
            for p in s..e {
                let col = indices[p];
                if col >= ncols {
                    return Err(SparseError::ColumnOutOfRange { row, col, ncols });
                }
                if p > s && indices[p - 1] >= col {
                    return Err(SparseError::UnsortedRow { row });
                }
                let value = values[p];
                if !(value.is_finite() && value > 0.0) {
                    return Err(SparseError::BadValue { row, col, value });
                }
            }
        }
        Ok(Self { nrows, ncols, indptr, indices, values })
    }

    /// Builds from per-row `(column, value)` lists; zero entries are dropped and
    /// each row is sorted by column. Duplicate columns are summed.
    pub fn from_rows(ncols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self, SparseError> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            let mut entries = row.clone();
            entries.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (c, v) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            for (c, v) in merged {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self::try_new(rows.len(), ncols, indptr, indices, values)
    }

    /// Drops zero entries of a dense matrix.
    pub fn from_dense(dense: &DenseMatrix) -> Result<Self, SparseError> {
        let rows: Vec<Vec<(usize, f64)>> = (0..dense.rows())
            .map(|r| dense.row(r).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, v)| (c, *v)).collect())
            .collect();
        Self::from_rows(dense.cols(), &rows)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let p = next[c];
                indices[p] = r;
                values[p] = v;
                next[c] += 1;
            }
        }
        Self { nrows: self.ncols, ncols: self.nrows, indptr, indices, values }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out.set(r, c, v);
            }
        }
        out
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Mean over all `nrows * ncols` entries, zeros included.
    pub fn mean(&self) -> f64 {
        let cells = (self.nrows * self.ncols) as f64;
        if cells == 0.0 {
            0.0
        } else {
            self.sum() / cells
        }
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (&c, &v) in self.indices.iter().zip(&self.values) {
            out[c] += v;
        }
        out
    }

    pub fn row_norm_sq(&self, r: usize) -> f64 {
        self.row(r).1.iter().map(|v| v * v).sum()
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &r in rows {
            let (cols, vals) = self.row(r);
            indices.extend_from_slice(cols);
            values.extend_from_slice(vals);
            indptr.push(indices.len());
        }
        Self { nrows: rows.len(), ncols: self.ncols, indptr, indices, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_and_transpose() {
        let dense = DenseMatrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, 0.0, 0.0], vec![0.0, 3.0, 4.0]]);
        let x = CsrMatrix::from_dense(&dense).unwrap();
        assert_eq!(x.nnz(), 4);
        assert_eq!(x.row(1).0.len(), 0);
        assert_eq!(x.to_dense(), dense);
        assert_eq!(x.transpose().to_dense(), dense.transpose());
        assert_eq!(x.transpose().transpose(), x);
        assert_eq!(x.column_sums(), vec![1.0, 3.0, 6.0]);
        assert!((x.frobenius_sq() - 30.0).abs() < 1e-12);
        assert_eq!(x.select_rows(&[2, 0]).to_dense(), DenseMatrix::from_rows(&[vec![0.0, 3.0, 4.0], vec![1.0, 0.0, 2.0]]));
    }

    #[test]
    fn rejects_invalid() {
        assert_eq!(
            CsrMatrix::try_new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]),
            Err(SparseError::UnsortedRow { row: 0 })
        );
        assert!(matches!(
            CsrMatrix::try_new(1, 2, vec![0, 1], vec![2], vec![1.0]),
            Err(SparseError::ColumnOutOfRange { .. })
        ));
        assert!(matches!(
            CsrMatrix::try_new(1, 2, vec![0, 1], vec![0], vec![-1.0]),
            Err(SparseError::BadValue { .. })
        ));
        assert!(matches!(CsrMatrix::try_new(2, 2, vec![0, 1], vec![0], vec![1.0]), Err(SparseError::IndptrLength { .. })));
    }
}

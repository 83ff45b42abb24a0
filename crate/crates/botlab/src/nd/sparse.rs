//! CSR sparse matrices. Used for the fixed aggregation operators of a graph;
//! values never carry gradients, so only `sparse * dense` is needed.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Csr<F> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<F>,
}

impl<F: Scalar> Csr<F> {
    /// Build from per-row (column, value) lists. Each row's entries must use
    /// in-range column indices; order within a row is preserved.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, F)>]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for &(c, v) in row {
                assert!(c < cols, "column index out of range");
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Csr {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, F)> + '_ {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        self.indices[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&c, &v)| (c, v))
    }

    pub fn transposed(&self) -> Csr<F> {
        let mut rows: Vec<Vec<(usize, F)>> = vec![Vec::new(); self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                rows[c].push((r, v));
            }
        }
        Csr::from_rows(self.rows, &rows)
    }

    /// self (r x c) * dense (c x n).
    pub fn matmul(&self, dense: &Tensor<F>) -> Result<Tensor<F>> {
        if self.cols != dense.rows() {
            return Err(Error::ShapeMismatch {
                op: "spmm",
                details: format!(
                    "{}x{} * {}x{}",
                    self.rows,
                    self.cols,
                    dense.rows(),
                    dense.cols()
                ),
            });
        }
        let n = dense.cols();
        let mut out = Tensor::zeros(self.rows, n);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                let src = dense.row(c);
                let dst = &mut out.data_mut()[r * n..(r + 1) * n];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + v * s;
                }
            }
        }
        Ok(out)
    }
}

/// A sparse operator bundled with its transpose, so the tape can run the
/// backward pass without rebuilding CSR structure every step.
#[derive(Clone, Debug)]
pub struct SpPair<F> {
    pub fwd: Csr<F>,
    pub bwd: Csr<F>,
}

impl<F: Scalar> SpPair<F> {
    pub fn new(fwd: Csr<F>) -> Self {
        let bwd = fwd.transposed();
        SpPair { fwd, bwd }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spmm_matches_dense_product() {
        // [[0, 2], [1, 0], [0.5, 0.5]] * [[1, 2], [3, 4]]
        let m = Csr::from_rows(
            2,
            &[
                vec![(1, 2.0)],
                vec![(0, 1.0)],
                vec![(0, 0.5), (1, 0.5)],
            ],
        );
        let d = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let got = m.matmul(&d).unwrap();
        assert_eq!(got.data(), &[6.0, 8.0, 1.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn transpose_swaps_entries() {
        let m = Csr::from_rows(3, &[vec![(2, 5.0)], vec![(0, 1.0)]]);
        let t = m.transposed();
        assert_eq!(t.rows(), 3);
        assert_eq!(t.cols(), 2);
        let entries: Vec<_> = t.row_entries(2).collect();
        assert_eq!(entries, vec![(0, 5.0)]);
    }
}

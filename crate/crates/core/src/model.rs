//! Sparse complex matrices and the linear system model `y = Hx + v`.

use ndarray::Array2;

use crate::error::invalid;
use crate::{Result, C64};

/// Column-compressed complex matrix. Each column holds `(row, value)` pairs
/// sorted by row with duplicates merged.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    cols: Vec<Vec<(usize, C64)>>,
}

impl SparseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            cols: vec![Vec::new(); n_cols],
        }
    }

    /// Builds a matrix from unsorted column entries. Repeated rows within a
    /// column are summed; exact zeros are dropped.
    pub fn from_column_entries(n_rows: usize, mut cols: Vec<Vec<(usize, C64)>>) -> Self {
        for col in cols.iter_mut() {
            col.sort_by_key(|&(r, _)| r);
            let mut merged: Vec<(usize, C64)> = Vec::with_capacity(col.len());
            for &(r, v) in col.iter() {
                debug_assert!(r < n_rows);
                match merged.last_mut() {
                    Some(last) if last.0 == r => last.1 += v,
                    _ => merged.push((r, v)),
                }
            }
            merged.retain(|&(_, v)| v != C64::new(0.0, 0.0));
            *col = merged;
        }
        Self { n_rows, cols }
    }

    /// Keeps entries whose magnitude is at least `rel_threshold` times the
    /// largest magnitude in their column. A threshold of zero keeps every
    /// nonzero entry.
    pub fn from_dense(h: &Array2<C64>, rel_threshold: f64) -> Self {
        let (n_rows, n_cols) = h.dim();
        let cols = (0..n_cols)
            .map(|c| {
                let col = h.column(c);
                let max = col.iter().fold(0.0f64, |m, v| m.max(v.norm()));
                col.iter()
                    .enumerate()
                    .filter(|(_, v)| v.norm() > 0.0 && v.norm() >= rel_threshold * max)
                    .map(|(r, &v)| (r, v))
                    .collect()
            })
            .collect();
        Self { n_rows, cols }
    }

    /// Copy keeping entries of at least `rel_threshold` times their column
    /// maximum.
    pub fn pruned(&self, rel_threshold: f64) -> Self {
        let cols = self
            .cols
            .iter()
            .map(|col| {
                let max = col.iter().fold(0.0f64, |m, (_, v)| m.max(v.norm()));
                col.iter().copied().filter(|(_, v)| v.norm() >= rel_threshold * max).collect()
            })
            .collect();
        Self {
            n_rows: self.n_rows,
            cols,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn column(&self, c: usize) -> &[(usize, C64)] {
        &self.cols[c]
    }

    pub fn nnz(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        match self.cols[c].binary_search_by_key(&r, |&(row, _)| row) {
            Ok(i) => self.cols[c][i].1,
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n_cols(), "dimension mismatch");
        let mut y = vec![C64::new(0.0, 0.0); self.n_rows];
        for (col, &xc) in self.cols.iter().zip(x) {
            if xc == C64::new(0.0, 0.0) {
                continue;
            }
            for &(r, v) in col {
                y[r] += v * xc;
            }
        }
        y
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut h = Array2::zeros((self.n_rows, self.n_cols()));
        for (c, col) in self.cols.iter().enumerate() {
            for &(r, v) in col {
                h[[r, c]] = v;
            }
        }
        h
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        self.cols.iter().flatten().map(|(_, v)| v.norm_sqr()).sum()
    }
}

/// Linear model `y = Hx + v` over the occupied support, with the row and
/// column supports used by message passing and the owner of every column.
#[derive(Debug, Clone)]
pub struct SystemModel {
    h: SparseMatrix,
    rows: Vec<Vec<(usize, C64)>>,
    col_user: Vec<usize>,
}

impl SystemModel {
    pub fn new(h: SparseMatrix, col_user: Vec<usize>) -> Result<Self> {
        if col_user.len() != h.n_cols() {
            return Err(invalid(format!(
                "column owner map has {} entries for {} columns",
                col_user.len(),
                h.n_cols()
            )));
        }
        let mut rows = vec![Vec::new(); h.n_rows()];
        for c in 0..h.n_cols() {
            for &(r, v) in h.column(c) {
                rows[r].push((c, v));
            }
        }
        Ok(Self { h, rows, col_user })
    }

    /// Single-owner model from a dense matrix.
    pub fn from_dense(h: &Array2<C64>, rel_threshold: f64) -> Self {
        let sparse = SparseMatrix::from_dense(h, rel_threshold);
        let n = sparse.n_cols();
        Self::new(sparse, vec![0; n]).expect("owner map sized from matrix")
    }

    /// Same model with small entries dropped (see [`SparseMatrix::pruned`]).
    pub fn pruned(&self, rel_threshold: f64) -> Self {
        Self::new(self.h.pruned(rel_threshold), self.col_user.clone()).expect("column count unchanged")
    }

    pub fn n_rows(&self) -> usize {
        self.h.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.h.n_cols()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.h
    }

    /// Support of row `s` (the variables observed by `y_s`) with values.
    pub fn row_support(&self, s: usize) -> &[(usize, C64)] {
        &self.rows[s]
    }

    /// Support of column `r` (the observations that see `x_r`) with values.
    pub fn col_support(&self, r: usize) -> &[(usize, C64)] {
        self.h.column(r)
    }

    pub fn col_user(&self) -> &[usize] {
        &self.col_user
    }

    pub fn num_users(&self) -> usize {
        self.col_user.iter().max().map_or(0, |m| m + 1)
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.h.mul_vec(x)
    }

    pub fn to_dense(&self) -> Array2<C64> {
        self.h.to_dense()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let m = SparseMatrix::from_column_entries(
            3,
            vec![vec![(2, c(1.0, 0.0)), (0, c(0.5, 0.0)), (2, c(0.0, 1.0))], vec![]],
        );
        assert_eq!(m.column(0), &[(0, c(0.5, 0.0)), (2, c(1.0, 1.0))]);
        assert_eq!(m.get(1, 0), c(0.0, 0.0));
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn cancelling_entries_drop_out() {
        let m = SparseMatrix::from_column_entries(2, vec![vec![(1, c(1.0, 0.0)), (1, c(-1.0, 0.0))]]);
        assert_eq!(m.nnz(), 0);
    }

    #[test]
    fn dense_round_trip_and_product() {
        let h = ndarray::array![[c(1.0, 0.0), c(0.0, 2.0)], [c(0.0, 0.0), c(3.0, -1.0)]];
        let m = SparseMatrix::from_dense(&h, 0.0);
        assert_eq!(m.to_dense(), h);
        let y = m.mul_vec(&[c(1.0, 0.0), c(1.0, 1.0)]);
        assert_eq!(y, vec![c(-1.0, 2.0), c(4.0, 2.0)]);
    }

    #[test]
    fn relative_threshold_prunes_small_entries() {
        let h = ndarray::array![[c(1.0, 0.0)], [c(1e-4, 0.0)], [c(0.01, 0.0)]];
        let m = SparseMatrix::from_dense(&h, 1e-3);
        assert_eq!(m.column(0).len(), 2);
        assert_eq!(SparseMatrix::from_dense(&h, 0.0).pruned(1e-3), m);
    }

    #[test]
    fn row_supports_mirror_columns() {
        let h = ndarray::array![[c(1.0, 0.0), c(2.0, 0.0)], [c(0.0, 0.0), c(3.0, 0.0)]];
        let model = SystemModel::new(SparseMatrix::from_dense(&h, 0.0), vec![0, 1]).unwrap();
        assert_eq!(model.row_support(0), &[(0, c(1.0, 0.0)), (1, c(2.0, 0.0))]);
        assert_eq!(model.row_support(1), &[(1, c(3.0, 0.0))]);
        assert_eq!(model.num_users(), 2);
        assert!(SystemModel::new(SparseMatrix::from_dense(&h, 0.0), vec![0]).is_err());
    }
}

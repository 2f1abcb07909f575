//! Compressed sparse row matrices for the hot products in the integrators.

use nalgebra::DMatrix;

use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<C64>,
}

impl CsrMatrix {
    /// Keeps every entry that is not exactly zero.
    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let (n_rows, n_cols) = m.shape();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..n_rows {
            for c in 0..n_cols {
                let v = m[(r, c)];
                if v != C64::new(0.0, 0.0) {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut t: Vec<(usize, usize, C64)>) -> Self {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx: Vec<usize> = Vec::with_capacity(t.len());
        let mut values: Vec<C64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            assert!(r < n_rows && c < n_cols, "triplet out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn adjoint(&self) -> Self {
        let t = (0..self.n_rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v.conj())))
            .collect();
        Self::from_triplets(self.n_cols, self.n_rows, t)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// `y = A x`.
    #[inline]
    pub fn mul_vec(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (r, out) in y.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let mut acc = C64::new(0.0, 0.0);
            for k in a..b {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *out = acc;
        }
    }

    /// `Y = A X` for column-major dense `X`.
    pub fn mul_dense(&self, x: &DMatrix<C64>, y: &mut DMatrix<C64>) {
        let ncols = x.ncols();
        debug_assert_eq!(y.shape(), (self.n_rows, ncols));
        let xs = x.as_slice();
        let ys = y.as_mut_slice();
        for j in 0..ncols {
            self.mul_vec(
                &xs[j * self.n_cols..(j + 1) * self.n_cols],
                &mut ys[j * self.n_rows..(j + 1) * self.n_rows],
            );
        }
    }

    /// `Z += s · Y A†` for column-major dense `Y` (rows of `A` index columns of `Z`).
    pub fn add_right_adjoint(&self, s: f64, y: &DMatrix<C64>, z: &mut DMatrix<C64>) {
        let n = y.nrows();
        let ys = y.as_slice();
        let zs = z.as_mut_slice();
        for j in 0..self.n_rows {
            let zc = &mut zs[j * n..(j + 1) * n];
            for (k, v) in self.row(j) {
                let w = v.conj() * s;
                let yc = &ys[k * n..(k + 1) * n];
                for (zi, yi) in zc.iter_mut().zip(yc) {
                    *zi += w * yi;
                }
            }
        }
    }

    /// Largest absolute row sum (∞-norm).
    pub fn row_sum_norm(&self) -> f64 {
        (0..self.n_rows)
            .map(|r| self.row(r).map(|(_, v)| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

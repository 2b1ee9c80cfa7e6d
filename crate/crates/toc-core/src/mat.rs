//! Row-major dense f64 matrix with the handful of kernels the networks need.
//!
//! Deliberately minimal: weights here are at most a few hundred units wide, so
//! plain loops beat a BLAS round trip and keep summation order fixed (the
//! determinism contract depends on it). Row-parallel variants go through
//! [`crate::par`], which preserves bit-identical output.

use serde::{Deserialize, Serialize};

use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Copy the given rows into a new matrix, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    /// `self (n x in) * w^T (in x out) + b`, the affine forward pass.
    pub fn affine(&self, w: &Mat, b: &[f64]) -> Mat {
        assert_eq!(self.cols, w.cols, "input width / weight fan-in mismatch");
        assert_eq!(w.rows, b.len(), "weight fan-out / bias mismatch");
        let (n, out_dim) = (self.rows, w.rows);
        let mut out = Mat::zeros(n, out_dim);
        par::fill_rows(&mut out.data, n, out_dim, |i, row| {
            let x = self.row(i);
            for (o, slot) in row.iter_mut().enumerate() {
                let wr = w.row(o);
                let mut acc = b[o];
                for k in 0..x.len() {
                    acc += x[k] * wr[k];
                }
                *slot = acc;
            }
        });
        out
    }

    /// Sequential [`Mat::affine`], exposed for the benchmark comparison.
    pub fn affine_seq(&self, w: &Mat, b: &[f64]) -> Mat {
        assert_eq!(self.cols, w.cols);
        assert_eq!(w.rows, b.len());
        let (n, out_dim) = (self.rows, w.rows);
        let mut out = Mat::zeros(n, out_dim);
        par::fill_rows_seq(&mut out.data, n, out_dim, |i, row| {
            let x = self.row(i);
            for (o, slot) in row.iter_mut().enumerate() {
                let wr = w.row(o);
                let mut acc = b[o];
                for k in 0..x.len() {
                    acc += x[k] * wr[k];
                }
                *slot = acc;
            }
        });
        out
    }

    /// `self^T (k x n)^T * other` -> `(self.cols x other.cols)`.
    ///
    /// This is the weight-gradient kernel: `dW = dZ^T * X` with `dZ = self`.
    pub fn t_mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "batch dims differ");
        let (out_r, out_c, n) = (self.cols, other.cols, self.rows);
        let mut out = Mat::zeros(out_r, out_c);
        par::fill_rows(&mut out.data, out_r, out_c, |o, row| {
            for k in 0..n {
                let a = self.get(k, o);
                if a == 0.0 {
                    continue;
                }
                let b = other.row(k);
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot += a * b[j];
                }
            }
        });
        out
    }

    /// `self (n x out) * w (out x in)` -> `(n x in)`: the input-gradient kernel.
    pub fn mul(&self, w: &Mat) -> Mat {
        assert_eq!(self.cols, w.rows, "inner dims differ");
        let (n, out_c) = (self.rows, w.cols);
        let mut out = Mat::zeros(n, out_c);
        par::fill_rows(&mut out.data, n, out_c, |i, row| {
            let a = self.row(i);
            for (k, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let wr = w.row(k);
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot += av * wr[j];
                }
            }
        });
        out
    }

    /// Column sums (the bias gradient).
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            for (j, s) in out.iter_mut().enumerate() {
                *s += row[j];
            }
        }
        out
    }
}

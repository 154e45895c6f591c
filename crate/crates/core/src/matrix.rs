//! Dense row-major `f64` matrix used throughout the toolkit.

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix needs {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Largest absolute entry. NaN entries poison the result with NaN.
    pub fn abs_max(&self) -> f64 {
        let mut m = 0.0f64;
        for &v in &self.data {
            if v.is_nan() {
                return f64::NAN;
            }
            m = m.max(v.abs());
        }
        m
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-column max of absolute values.
    pub fn col_abs_max(&self) -> Vec<f64> {
        let mut out = vec![0.0f64; self.cols];
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                let a = v.abs();
                if a > out[j] || a.is_nan() {
                    out[j] = a;
                }
            }
        }
        out
    }

    /// New matrix whose column `j` is column `perm[j]` of `self`.
    pub fn permute_cols(&self, perm: &[usize]) -> Result<Matrix> {
        if perm.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "permutation of length {} applied to {} columns",
                perm.len(),
                self.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let src = self.row(i);
            let dst = out.row_mut(i);
            for (j, &p) in perm.iter().enumerate() {
                dst[j] = src[p];
            }
        }
        Ok(out)
    }

    /// `self * other^T` with a fixed left-to-right reduction per output
    /// element. Rows are computed in parallel; each dot product is serial, so
    /// the result is identical under any schedule.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "matmul_nt: lhs is {}x{}, rhs is {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = self.rows;
        let m = other.rows;
        let k = self.cols;
        let rows = par::map_indexed(n, |i| {
            let a = self.row(i);
            let mut out = vec![0.0f64; m];
            for (j, o) in out.iter_mut().enumerate() {
                let b = other.row(j);
                let mut acc = 0.0f64;
                for t in 0..k {
                    acc += a[t] * b[t];
                }
                *o = acc;
            }
            out
        });
        Ok(Matrix {
            rows: n,
            cols: m,
            data: rows.concat(),
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch(format!(
                "subtract {}x{} from {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

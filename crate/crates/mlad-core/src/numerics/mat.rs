//! Dense row-major `f64` matrices and the elementwise/linear-algebra
//! operations the rest of the crate is built on.

use crate::error::{MladError, Result};

/// Dense matrix, row-major, 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(MladError::dim(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        let m = Mat { rows, cols, data };
        m.check_finite("from_vec")?;
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(MladError::dim("matrix needs at least one row"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MladError::dim("ragged rows"));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Mat::from_vec(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// New matrix containing the given rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut out = Mat::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn check_finite(&self, ctx: &str) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(MladError::numerical(format!(
                "non-finite entry at flat index {pos} in {ctx} ({}x{})",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// Standard matrix product.
    pub fn matmul(&self, b: &Mat) -> Result<Mat> {
        if self.cols != b.rows {
            return Err(MladError::dim(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (k, &aik) in arow.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let brow = b.row(k);
                for j in 0..b.cols {
                    orow[j] += aik * brow[j];
                }
            }
        }
        debug_assert!(out.data.iter().all(|v| v.is_finite()), "matmul produced non-finite");
        Ok(out)
    }

    /// `self * b^T` without materializing the transpose.
    pub fn matmul_nt(&self, b: &Mat) -> Result<Mat> {
        if self.cols != b.cols {
            return Err(MladError::dim(format!(
                "matmul_nt {}x{} by ({}x{})^T",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..b.rows {
                let brow = b.row(j);
                let mut s = 0.0;
                for k in 0..self.cols {
                    s += arow[k] * brow[k];
                }
                out.data[i * b.rows + j] = s;
            }
        }
        Ok(out)
    }

    /// `self^T * b` without materializing the transpose.
    pub fn matmul_tn(&self, b: &Mat) -> Result<Mat> {
        if self.rows != b.rows {
            return Err(MladError::dim(format!(
                "matmul_tn ({}x{})^T by {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let mut out = Mat::zeros(self.cols, b.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = b.row(k);
            for i in 0..self.cols {
                let aki = arow[i];
                if aki == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for j in 0..b.cols {
                    orow[j] += aki * brow[j];
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn add(&self, b: &Mat) -> Result<Mat> {
        self.zip_with(b, "add", |x, y| x + y)
    }

    pub fn sub(&self, b: &Mat) -> Result<Mat> {
        self.zip_with(b, "sub", |x, y| x - y)
    }

    pub fn mul_elem(&self, b: &Mat) -> Result<Mat> {
        self.zip_with(b, "mul_elem", |x, y| x * y)
    }

    fn zip_with(&self, b: &Mat, ctx: &str, f: impl Fn(f64, f64) -> f64) -> Result<Mat> {
        if self.rows != b.rows || self.cols != b.cols {
            return Err(MladError::dim(format!(
                "{ctx} {}x{} with {}x{}",
                self.rows, self.cols, b.rows, b.cols
            )));
        }
        let data = self.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Mat { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s * b`
    pub fn axpy(&mut self, s: f64, b: &Mat) -> Result<()> {
        if self.rows != b.rows || self.cols != b.cols {
            return Err(MladError::dim("axpy shape mismatch"));
        }
        for (x, y) in self.data.iter_mut().zip(&b.data) {
            *x += s * y;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Mean over all entries.
    pub fn mean_all(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population (biased) standard deviation over all entries.
    pub fn std_all(&self) -> f64 {
        let mu = self.mean_all();
        let var = self.data.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / self.data.len() as f64;
        var.sqrt()
    }

    /// Column means (length `cols`).
    pub fn col_means(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, &v) in mu.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        mu.iter_mut().for_each(|m| *m /= n);
        mu
    }

    /// Biased column variances (length `cols`).
    pub fn col_vars(&self, means: &[f64]) -> Vec<f64> {
        let mut var = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                let d = self.at(i, j) - means[j];
                var[j] += d * d;
            }
        }
        let n = self.rows as f64;
        var.iter_mut().for_each(|v| *v /= n);
        var
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (acc, &v) in s.iter_mut().zip(self.row(i)) {
                *acc += v;
            }
        }
        s
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&self) -> Mat {
        let mut out = self.clone();
        for i in 0..self.rows {
            let row = out.row_mut(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        out
    }

    /// Matrix-vector product `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(MladError::dim(format!(
                "matvec {}x{} by len {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut s = 0.0;
            for k in 0..self.cols {
                s += row[k] * v[k];
            }
            out[i] = s;
        }
        Ok(out)
    }

    /// `self^T * v`.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.rows != v.len() {
            return Err(MladError::dim(format!(
                "matvec_t ({}x{})^T by len {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            let vi = v[i];
            for k in 0..self.cols {
                out[k] += row[k] * vi;
            }
        }
        Ok(out)
    }
}

/// Max-shifted log-sum-exp of a vector.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|x| (x - mx).exp()).sum();
    mx + s.ln()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

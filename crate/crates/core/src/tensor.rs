//! Dense third-order tensors and the mode-2 machinery MPCA is built on.
//!
//! A [`Tensor3`] has dims `(i1, i2, i3)` = (rows, columns, slices) and is stored
//! slice-major, then row, then column: element `(r, c, k)` lives at
//! `k * i1 * i2 + r * i2 + c`. Each slice is therefore one contiguous row-major
//! image, and each mode-2 vector (a row of a slice) is a contiguous run of `i2`
//! values.
//!
//! The mode-2 unfolding enumerates mode-2 vectors slice-major: column `q` of the
//! unfolded `i2 x (i1 * i3)` matrix is the vector at row `r` of slice `k` with
//! `q = k * i1 + r`. With this order the raw storage, read as an
//! `(i1 * i3) x i2` row-major matrix, is exactly the transpose of the unfolding.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite matrix entry at {i}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("ragged rows"));
        }
        Self::from_vec(r, c, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape("matrix add dimension mismatch"));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Third-order tensor `rows x columns x slices`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(i1: usize, i2: usize, i3: usize) -> Result<Self> {
        check_dims(i1, i2, i3)?;
        Ok(Self {
            dims: (i1, i2, i3),
            data: vec![0.0; i1 * i2 * i3],
        })
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (i1, i2, i3) = dims;
        check_dims(i1, i2, i3)?;
        if data.len() != i1 * i2 * i3 {
            return Err(Error::shape(format!(
                "tensor {i1}x{i2}x{i3} needs {} values, got {}",
                i1 * i2 * i3,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite tensor entry at {i}")));
        }
        Ok(Self { dims, data })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, k: usize) -> f64 {
        let (i1, i2, _) = self.dims;
        self.data[k * i1 * i2 + r * i2 + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, k: usize, v: f64) {
        let (i1, i2, _) = self.dims;
        self.data[k * i1 * i2 + r * i2 + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Number of mode-2 vectors, `i1 * i3`.
    pub fn mode2_count(&self) -> usize {
        self.dims.0 * self.dims.2
    }

    /// Mode-2 vector `q = k * i1 + r`.
    #[inline]
    pub fn mode2_vector(&self, q: usize) -> &[f64] {
        let i2 = self.dims.1;
        &self.data[q * i2..(q + 1) * i2]
    }

    pub fn mode2_vectors(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dims.1)
    }

    /// Contiguous values of slice `k` (row-major `i1 x i2`).
    pub fn slice_values(&self, k: usize) -> &[f64] {
        let (i1, i2, _) = self.dims;
        &self.data[k * i1 * i2..(k + 1) * i1 * i2]
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_dims(i1: usize, i2: usize, i3: usize) -> Result<()> {
    if i1 == 0 || i2 == 0 || i3 == 0 {
        return Err(Error::shape(format!("tensor dims must be >= 1, got {i1}x{i2}x{i3}")));
    }
    Ok(())
}

/// `i2 x (i1 * i3)` matrix whose column `q = k * i1 + r` is the mode-2 vector at row `r`, slice `k`.
pub fn unfold_mode2(t: &Tensor3) -> Matrix {
    let (_, i2, _) = t.dims;
    let n = t.mode2_count();
    let mut out = Matrix::zeros(i2, n);
    for (q, v) in t.mode2_vectors().enumerate() {
        for (c, &x) in v.iter().enumerate() {
            out.data[c * n + q] = x;
        }
    }
    out
}

pub fn fold_mode2(m: &Matrix, dims: (usize, usize, usize)) -> Result<Tensor3> {
    let (i1, i2, i3) = dims;
    check_dims(i1, i2, i3)?;
    if m.rows != i2 || m.cols != i1 * i3 {
        return Err(Error::shape(format!(
            "fold_mode2: matrix {}x{} does not match dims {i1}x{i2}x{i3}",
            m.rows, m.cols
        )));
    }
    let n = i1 * i3;
    let mut data = vec![0.0; i1 * i2 * i3];
    for q in 0..n {
        for c in 0..i2 {
            data[q * i2 + c] = m.data[c * n + q];
        }
    }
    Ok(Tensor3 { dims, data })
}

/// Replace every mode-2 vector `v` with `b_transpose * v`.
pub fn mode2_product(t: &Tensor3, b_transpose: &Matrix) -> Result<Tensor3> {
    let (i1, i2, i3) = t.dims;
    if b_transpose.cols != i2 {
        return Err(Error::shape(format!(
            "mode2_product: projection has {} columns, tensor has i2 = {i2}",
            b_transpose.cols
        )));
    }
    let p = b_transpose.rows;
    let mut data = Vec::with_capacity(i1 * p * i3);
    for v in t.mode2_vectors() {
        for j in 0..p {
            data.push(dot(b_transpose.row(j), v));
        }
    }
    Ok(Tensor3 {
        dims: (i1, p, i3),
        data,
    })
}

pub fn slice(t: &Tensor3, k: usize) -> Result<Matrix> {
    let (i1, i2, i3) = t.dims;
    if k >= i3 {
        return Err(Error::shape(format!("slice index {k} out of range (i3 = {i3})")));
    }
    Ok(Matrix {
        rows: i1,
        cols: i2,
        data: t.slice_values(k).to_vec(),
    })
}

/// Concatenate slices along mode 3, preserving order.
pub fn stack(slices: &[Matrix]) -> Result<Tensor3> {
    let first = slices
        .first()
        .ok_or_else(|| Error::shape("stack of zero slices"))?;
    let (i1, i2) = (first.rows, first.cols);
    let mut data = Vec::with_capacity(i1 * i2 * slices.len());
    for (k, s) in slices.iter().enumerate() {
        if s.rows != i1 || s.cols != i2 {
            return Err(Error::shape(format!(
                "slice {k} is {}x{}, expected {i1}x{i2}",
                s.rows, s.cols
            )));
        }
        data.extend_from_slice(&s.data);
    }
    Tensor3::from_vec((i1, i2, slices.len()), data)
}

/// Concatenate two tensors along mode 3 (`a`'s slices first).
pub fn concat_slices(a: &Tensor3, b: &Tensor3) -> Result<Tensor3> {
    if a.dims.0 != b.dims.0 || a.dims.1 != b.dims.1 {
        return Err(Error::shape(format!(
            "cannot concatenate {:?} with {:?} along mode 3",
            a.dims, b.dims
        )));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(Tensor3 {
        dims: (a.dims.0, a.dims.1, a.dims.2 + b.dims.2),
        data,
    })
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorises without reassociation
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

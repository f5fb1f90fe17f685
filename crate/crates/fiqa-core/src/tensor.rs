//! Dense f32 matrices and the small kernel set the forward pass is built from.
//!
//! Kernels are pure functions: identical inputs produce bitwise-identical
//! outputs. Storage is f32, accumulation is f64 throughout.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, len: usize },
    #[error("matmul shape mismatch: left is {lrows}x{lcols}, right is {rrows}x{rcols}")]
    MatmulShape { lrows: usize, lcols: usize, rrows: usize, rcols: usize },
    #[error("layer_norm parameter length {param} does not match row width {cols}")]
    NormParamLength { cols: usize, param: usize },
}

/// Row-major matrix of f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Fails if `data.len() != rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::DataLength { rows, cols, len: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from a slice of equal-length rows. Panics on ragged input;
    /// intended for literals in tests and fixtures.
    pub fn from_rows(rows: &[&[f32]]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: nrows, cols: ncols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies a contiguous range of columns into a new matrix.
    pub fn col_slice(&self, start: usize, width: usize) -> Self {
        assert!(start + width <= self.cols, "column slice out of range");
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            let base = r * self.cols + start;
            data.extend_from_slice(&self.data[base..base + width]);
        }
        Self { rows: self.rows, cols: width, data }
    }
}

/// Matrix product `a * b` with f64 accumulation.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, TensorError> {
    if a.cols != b.rows {
        return Err(TensorError::MatmulShape {
            lrows: a.rows,
            lcols: a.cols,
            rrows: b.rows,
            rcols: b.cols,
        });
    }
    let mut acc = vec![0f64; b.cols];
    let mut data = Vec::with_capacity(a.rows * b.cols);
    for i in 0..a.rows {
        acc.fill(0.0);
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k] as f64;
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (s, &bkj) in acc.iter_mut().zip(brow) {
                *s += aik * bkj as f64;
            }
        }
        data.extend(acc.iter().map(|&v| v as f32));
    }
    Ok(Matrix { rows: a.rows, cols: b.cols, data })
}

pub fn transpose(a: &Matrix) -> Matrix {
    let mut data = vec![0.0; a.data.len()];
    for r in 0..a.rows {
        for c in 0..a.cols {
            data[c * a.rows + r] = a.data[r * a.cols + c];
        }
    }
    Matrix { rows: a.cols, cols: a.rows, data }
}

/// Per-row layer normalization with population variance:
/// `out[j] = (x[j] - mean) / sqrt(var + eps) * gamma[j] + beta[j]`.
pub fn layer_norm(
    x: &Matrix,
    gamma: &[f32],
    beta: &[f32],
    eps: f32,
) -> Result<Matrix, TensorError> {
    if gamma.len() != x.cols {
        return Err(TensorError::NormParamLength { cols: x.cols, param: gamma.len() });
    }
    if beta.len() != x.cols {
        return Err(TensorError::NormParamLength { cols: x.cols, param: beta.len() });
    }
    let n = x.cols as f64;
    let mut data = Vec::with_capacity(x.data.len());
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let denom = (var + eps as f64).sqrt();
        for (j, &v) in row.iter().enumerate() {
            let norm = (v as f64 - mean) / denom;
            data.push((norm * gamma[j] as f64 + beta[j] as f64) as f32);
        }
    }
    Ok(Matrix { rows: x.rows, cols: x.cols, data })
}

/// Row-wise softmax with max subtraction, so rows with large logits stay finite.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut data = Vec::with_capacity(x.data.len());
    for r in 0..x.rows {
        let row = x.row(r);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        data.extend(exps.iter().map(|&e| (e / sum) as f32));
    }
    Matrix { rows: x.rows, cols: x.cols, data }
}

/// Elementwise GELU in its exact form, `x * Phi(x)` with the Gaussian CDF
/// written through erf. Not the tanh approximation.
pub fn gelu(x: &Matrix) -> Matrix {
    let data = x.data.iter().map(|&v| gelu_scalar(v as f64) as f32).collect();
    Matrix { rows: x.rows, cols: x.cols, data }
}

fn gelu_scalar(x: f64) -> f64 {
    let phi = 0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2));
    x * phi
}

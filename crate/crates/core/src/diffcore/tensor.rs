//! Row-major f32 tensor for activations and datasets.
//!
//! Parameters and gradients live in f64 (`ParamVector`); bulk data such as
//! images stays in f32. Internal math converts to f64 at the boundary.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Dense row-major tensor. The first axis indexes samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Build a tensor, validating shape/volume agreement and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let volume: usize = shape.iter().product();
        if volume != data.len() {
            return Err(Error::DimensionMismatch {
                what: "tensor volume",
                expected: volume,
                actual: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { what: "tensor data" });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let volume = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; volume],
        }
    }

    /// A 2-d tensor from sample rows of equal length.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "tensor row",
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![n, dim], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of samples (size of the first axis; 0 for rank-0).
    pub fn n_rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Flattened size of the remaining axes.
    pub fn row_dim(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.row_dim();
        &self.data[i * d..(i + 1) * d]
    }

    /// Gather selected rows into a new tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let d = self.row_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= self.n_rows() {
                return Err(Error::DimensionMismatch {
                    what: "row index",
                    expected: self.n_rows(),
                    actual: i,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(vec![indices.len(), d], data)
    }

    /// Widen to an f64 matrix of shape `[n_rows, row_dim]`.
    pub fn to_f64_matrix(&self) -> Array2<f64> {
        let n = self.n_rows();
        let d = self.row_dim();
        Array2::from_shape_fn((n, d), |(i, j)| f64::from(self.data[i * d + j]))
    }

    /// Narrow an f64 matrix back to an f32 tensor, checking finiteness.
    pub fn from_f64_matrix(m: &Array2<f64>) -> Result<Self> {
        let (n, d) = m.dim();
        let mut data = Vec::with_capacity(n * d);
        for v in m.iter() {
            let v32 = *v as f32;
            if !v32.is_finite() {
                return Err(Error::NonFinite { what: "tensor data" });
            }
            data.push(v32);
        }
        Tensor::new(vec![n, d], data)
    }
}

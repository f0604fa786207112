//! Flat f64 parameter vector with the handful of BLAS-1 style operations
//! the optimizers and solvers need. All reductions are sequential and
//! order-fixed so results are bitwise reproducible.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// self += a * x
    pub fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert_eq!(self.len(), x.len());
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { what })
        }
    }

    /// Cosine similarity; 0.0 when either vector has zero norm.
    pub fn cosine(&self, other: &Self) -> f64 {
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            self.dot(other) / denom
        }
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dot_and_norm() {
        let a = ParamVector::from_vec(vec![3.0, 4.0]);
        let b = ParamVector::from_vec(vec![1.0, 2.0]);
        assert_relative_eq!(a.dot(&b), 11.0);
        assert_relative_eq!(a.norm(), 5.0);
    }

    #[test]
    fn axpy_updates_in_place() {
        let mut a = ParamVector::from_vec(vec![1.0, 1.0]);
        let x = ParamVector::from_vec(vec![2.0, -1.0]);
        a.axpy(0.5, &x);
        assert_eq!(a.as_slice(), &[2.0, 0.5]);
    }

    #[test]
    fn cosine_handles_zero() {
        let z = ParamVector::zeros(3);
        let a = ParamVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert_eq!(z.cosine(&a), 0.0);
        assert_relative_eq!(a.cosine(&a), 1.0);
    }

    #[test]
    fn finiteness_check() {
        let ok = ParamVector::from_vec(vec![1.0]);
        assert!(ok.check_finite("x").is_ok());
        let bad = ParamVector::from_vec(vec![f64::NAN]);
        assert!(bad.check_finite("x").is_err());
    }
}

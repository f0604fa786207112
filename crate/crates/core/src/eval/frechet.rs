//! Frechet distance between gaussian fits of two feature clouds:
//! ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2)).
//!
//! The cross term uses the symmetric form tr((S1^(1/2) S2 S1^(1/2))^(1/2)),
//! computed by eigendecomposition. Small negative eigenvalues (relative to
//! the largest) are clamped to zero; anything below the clamp tolerance is
//! reported as a non-PSD covariance error.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Relative eigenvalue clamp: negatives above -CLAMP_REL * max |eig| are
/// treated as zero.
pub const CLAMP_REL: f64 = 1e-10;

fn clamped_sqrt_eigs(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let eig = SymmetricEigen::new(m.clone());
    let max_abs = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let floor = -CLAMP_REL * max_abs.max(1e-300);
    let mut sqrt_vals = DVector::zeros(eig.eigenvalues.len());
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v < floor {
            return Err(Error::NonPsdCovariance { eigenvalue: v });
        }
        sqrt_vals[i] = v.max(0.0).sqrt();
    }
    Ok((eig.eigenvectors, sqrt_vals))
}

fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vecs, sqrt_vals) = clamped_sqrt_eigs(m)?;
    let scaled = &vecs * DMatrix::from_diagonal(&sqrt_vals);
    Ok(&scaled * vecs.transpose())
}

fn moments(features: &Array2<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (m, d) = features.dim();
    if m < 2 {
        return Err(Error::Empty("feature sample (need at least 2 rows)"));
    }
    let mut mean = DVector::zeros(d);
    for row in features.rows() {
        for (j, &v) in row.iter().enumerate() {
            mean[j] += v;
        }
    }
    mean /= m as f64;

    let mut cov = DMatrix::zeros(d, d);
    let mut centered = DVector::zeros(d);
    for row in features.rows() {
        for (j, &v) in row.iter().enumerate() {
            centered[j] = v - mean[j];
        }
        cov.ger(1.0, &centered, &centered, 1.0);
    }
    cov /= (m - 1) as f64;
    Ok((mean, cov))
}

/// Frechet distance between gaussian fits of two feature matrices
/// (rows are samples, columns are feature dimensions).
pub fn frechet_from_features(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            what: "feature width",
            expected: a.ncols(),
            actual: b.ncols(),
        });
    }
    let (mu1, s1) = moments(a)?;
    let (mu2, s2) = moments(b)?;

    let s1_sqrt = sym_sqrt(&s1)?;
    let inner = &s1_sqrt * &s2 * &s1_sqrt;
    let (_, sqrt_vals) = clamped_sqrt_eigs(&inner)?;
    let cross: f64 = sqrt_vals.iter().sum();

    let mean_term = (&mu1 - &mu2).norm_squared();
    let fd = mean_term + s1.trace() + s2.trace() - 2.0 * cross;
    // Exact-zero cases can land a hair below zero in floating point.
    Ok(fd.max(0.0))
}

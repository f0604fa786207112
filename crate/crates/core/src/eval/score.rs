//! Score proxy over task-classifier posteriors:
//! exp(E_x KL(p(y|x) || p(y))), bounded by [1, number of classes].

use ndarray::Array2;

use crate::error::{Error, Result};

/// Compute the score from a matrix of per-sample class posteriors
/// (rows sum to 1).
pub fn score_from_posteriors(posteriors: &Array2<f64>) -> Result<f64> {
    let (m, k) = posteriors.dim();
    if m == 0 || k == 0 {
        return Err(Error::Empty("posterior matrix"));
    }
    let mut marginal = vec![0.0f64; k];
    for row in posteriors.rows() {
        for (j, &p) in row.iter().enumerate() {
            if !(0.0..=1.0 + 1e-9).contains(&p) {
                return Err(Error::NonFinite {
                    what: "class posterior",
                });
            }
            marginal[j] += p;
        }
    }
    for q in &mut marginal {
        *q /= m as f64;
    }

    let mut mean_kl = 0.0;
    for row in posteriors.rows() {
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mean_kl += p * (p / marginal[j]).ln();
            }
        }
    }
    mean_kl /= m as f64;
    Ok(mean_kl.exp())
}

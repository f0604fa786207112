//! Damped conjugate gradient for (H + damping I) x = b with a matrix-free
//! operator. Reports the relative residual and iteration count; negative
//! curvature aborts with an error rather than returning garbage.

use crate::diffcore::params::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct CgConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            tol: 1e-8,
            max_iter: 250,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: ParamVector,
    pub rel_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solve (H + damping I) x = b where `apply` computes H v.
pub fn cg_solve<F>(apply: F, b: &ParamVector, cfg: &CgConfig) -> Result<CgSolution>
where
    F: Fn(&ParamVector) -> Result<ParamVector>,
{
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x: ParamVector::zeros(b.len()),
            rel_residual: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let damped = |v: &ParamVector| -> Result<ParamVector> {
        let mut hv = apply(v)?;
        hv.axpy(cfg.damping, v);
        Ok(hv)
    };

    let mut x = ParamVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);

    let mut best_x = x.clone();
    let mut best_rel = 1.0;

    for iter in 0..cfg.max_iter {
        let rel = rs.sqrt() / b_norm;
        if rel < best_rel {
            best_rel = rel;
            best_x = x.clone();
        }
        if rel <= cfg.tol {
            return Ok(CgSolution {
                x,
                rel_residual: rel,
                iterations: iter,
                converged: true,
            });
        }

        let ap = damped(&p)?;
        let curvature = p.dot(&ap);
        if curvature <= 0.0 || !curvature.is_finite() {
            return Err(Error::CgBreakdown {
                iteration: iter,
                curvature,
            });
        }
        let alpha = rs / curvature;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rs_new = r.dot(&r);
        let beta = rs_new / rs;
        rs = rs_new;
        let mut p_new = r.clone();
        p_new.axpy(beta, &p);
        p = p_new;
    }

    let rel = rs.sqrt() / b_norm;
    if rel < best_rel {
        best_rel = rel;
        best_x = x;
    }
    Ok(CgSolution {
        x: best_x,
        rel_residual: best_rel,
        iterations: cfg.max_iter,
        converged: false,
    })
}

//! Strictly convex probe models (ridge-regularized logistic and linear
//! regression) with analytic gradients and Hessians. These make influence
//! estimates checkable against exact leave-one-out refits and dense algebra.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::diffcore::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeKind {
    /// Targets must be +-1.
    Logistic,
    /// Real targets, squared error.
    Linear,
}

/// Fitted convex model. The per-sample loss includes the ridge term
/// lambda/2 ||theta||^2, so the mean training loss has Hessian
/// (1/n) sum_i H_i with each H_i positive definite.
#[derive(Debug, Clone)]
pub struct ConvexProbe {
    kind: ProbeKind,
    features: DMatrix<f64>,
    targets: DVector<f64>,
    lambda: f64,
    theta: DVector<f64>,
}

pub(crate) fn to_dv(p: &ParamVector) -> DVector<f64> {
    DVector::from_column_slice(p.as_slice())
}

pub(crate) fn from_dv(v: DVector<f64>) -> ParamVector {
    ParamVector::from_vec(v.as_slice().to_vec())
}

const FIT_TOL: f64 = 1e-10;
const REFIT_TOL: f64 = 1e-8;
const MAX_NEWTON: usize = 100;

impl ConvexProbe {
    /// Fit by Newton iteration to gradient norm <= 1e-10.
    pub fn fit(
        kind: ProbeKind,
        features: DMatrix<f64>,
        targets: DVector<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::Empty("probe data"));
        }
        if features.nrows() != targets.len() {
            return Err(Error::CountMismatch {
                images: features.nrows(),
                labels: targets.len(),
            });
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Config("probe lambda must be positive".into()));
        }
        if kind == ProbeKind::Logistic && targets.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::Config("logistic targets must be +-1".into()));
        }
        let mut probe = Self {
            kind,
            theta: DVector::zeros(features.ncols()),
            features,
            targets,
            lambda,
        };
        let all: Vec<usize> = (0..probe.n()).collect();
        probe.theta = probe.newton(probe.theta.clone(), &all, FIT_TOL)?;
        Ok(probe)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn theta(&self) -> ParamVector {
        from_dv(self.theta.clone())
    }

    fn margin_at(&self, theta: &DVector<f64>, idx: usize) -> f64 {
        self.features.row(idx).transpose().dot(theta)
    }

    /// Per-sample loss at an arbitrary parameter point.
    pub fn sample_loss_at(&self, theta: &ParamVector, idx: usize) -> f64 {
        let th = to_dv(theta);
        self.sample_loss_dv(&th, idx)
    }

    fn sample_loss_dv(&self, theta: &DVector<f64>, idx: usize) -> f64 {
        let m = self.margin_at(theta, idx);
        let reg = 0.5 * self.lambda * theta.norm_squared();
        match self.kind {
            ProbeKind::Logistic => {
                let ym = self.targets[idx] * m;
                // ln(1 + exp(-ym)), stable for large |ym|.
                let base = if ym > 0.0 {
                    (-ym).exp().ln_1p()
                } else {
                    -ym + ym.exp().ln_1p()
                };
                base + reg
            }
            ProbeKind::Linear => {
                let r = m - self.targets[idx];
                0.5 * r * r + reg
            }
        }
    }

    fn sample_grad_dv(&self, theta: &DVector<f64>, idx: usize) -> DVector<f64> {
        let x = self.features.row(idx).transpose();
        let m = self.margin_at(theta, idx);
        let mut g = match self.kind {
            ProbeKind::Logistic => {
                let y = self.targets[idx];
                let s = sigmoid(-y * m);
                x * (-y * s)
            }
            ProbeKind::Linear => x * (m - self.targets[idx]),
        };
        g += theta * self.lambda;
        g
    }

    /// Curvature weight of sample idx: its Hessian is w x x^T + lambda I.
    fn curvature_weight(&self, theta: &DVector<f64>, idx: usize) -> f64 {
        match self.kind {
            ProbeKind::Logistic => {
                let s = sigmoid(self.margin_at(theta, idx));
                s * (1.0 - s)
            }
            ProbeKind::Linear => 1.0,
        }
    }

    fn mean_grad_over(&self, theta: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
        let mut g = DVector::zeros(self.d());
        for &i in idx {
            g += self.sample_grad_dv(theta, i);
        }
        g / idx.len() as f64
    }

    fn mean_hess_over(&self, theta: &DVector<f64>, idx: &[usize]) -> DMatrix<f64> {
        let d = self.d();
        let mut h = DMatrix::zeros(d, d);
        for &i in idx {
            let w = self.curvature_weight(theta, i);
            let x = self.features.row(i).transpose();
            h.ger(w, &x, &x, 1.0);
        }
        h /= idx.len() as f64;
        for i in 0..d {
            h[(i, i)] += self.lambda;
        }
        h
    }

    fn newton(
        &self,
        mut theta: DVector<f64>,
        idx: &[usize],
        tol: f64,
    ) -> Result<DVector<f64>> {
        for _ in 0..MAX_NEWTON {
            let g = self.mean_grad_over(&theta, idx);
            if g.norm() <= tol {
                return Ok(theta);
            }
            let h = self.mean_hess_over(&theta, idx);
            let chol = Cholesky::new(h)
                .ok_or_else(|| Error::Optimizer("probe Hessian not positive definite".into()))?;
            theta -= chol.solve(&g);
        }
        let g = self.mean_grad_over(&theta, idx);
        if g.norm() <= tol {
            Ok(theta)
        } else {
            Err(Error::Optimizer(format!(
                "Newton stalled at gradient norm {:.3e}",
                g.norm()
            )))
        }
    }

    /// Exact leave-one-out refit (Newton from the fitted point, gradient
    /// norm <= 1e-8). Returns the refitted parameters.
    pub fn loo_theta(&self, exclude: usize) -> Result<ParamVector> {
        if exclude >= self.n() {
            return Err(Error::DimensionMismatch {
                what: "probe sample index",
                expected: self.n(),
                actual: exclude,
            });
        }
        if self.n() < 2 {
            return Err(Error::Empty("leave-one-out subset"));
        }
        let rest: Vec<usize> = (0..self.n()).filter(|&i| i != exclude).collect();
        let theta = self.newton(self.theta.clone(), &rest, REFIT_TOL)?;
        Ok(from_dv(theta))
    }

    /// Dense mean Hessian at the fitted point (oracle for matrix-free paths).
    pub fn mean_hessian_dense(&self) -> DMatrix<f64> {
        let all: Vec<usize> = (0..self.n()).collect();
        self.mean_hess_over(&self.theta, &all)
    }

    pub fn subset_hessian_dense(&self, idx: &[usize]) -> Result<DMatrix<f64>> {
        if idx.is_empty() {
            return Err(Error::Empty("hessian subset"));
        }
        Ok(self.mean_hess_over(&self.theta, idx))
    }

    pub fn mean_grad_dense(&self) -> DVector<f64> {
        let all: Vec<usize> = (0..self.n()).collect();
        self.mean_grad_over(&self.theta, &all)
    }
}

fn sigmoid(x: f64) -> f64 {
    crate::diffcore::net::sigmoid(x)
}

impl crate::influence::InfluenceTarget for ConvexProbe {
    fn dim(&self) -> usize {
        self.d()
    }

    fn n_train(&self) -> usize {
        self.n()
    }

    fn sample_loss(&self, idx: usize) -> Result<f64> {
        self.check_idx(idx)?;
        Ok(self.sample_loss_dv(&self.theta, idx))
    }

    fn sample_grad(&self, idx: usize) -> Result<ParamVector> {
        self.check_idx(idx)?;
        Ok(from_dv(self.sample_grad_dv(&self.theta, idx)))
    }

    fn hvp(&self, v: &ParamVector) -> Result<ParamVector> {
        let idx: Vec<usize> = (0..self.n()).collect();
        self.subset_hvp(&idx, v)
    }

    fn subset_hvp(&self, idx: &[usize], v: &ParamVector) -> Result<ParamVector> {
        if idx.is_empty() {
            return Err(Error::Empty("hessian subset"));
        }
        // (1/|S|) sum_i [w_i x_i (x_i . v)] + lambda v, matrix-free.
        let vd = to_dv(v);
        let mut out = DVector::zeros(self.d());
        for &i in idx {
            self.check_idx(i)?;
            let x = self.features.row(i).transpose();
            let w = self.curvature_weight(&self.theta, i);
            out += &x * (w * x.dot(&vd));
        }
        out /= idx.len() as f64;
        out += &vd * self.lambda;
        Ok(from_dv(out))
    }
}

impl ConvexProbe {
    fn check_idx(&self, idx: usize) -> Result<()> {
        if idx >= self.n() {
            return Err(Error::DimensionMismatch {
                what: "probe sample index",
                expected: self.n(),
                actual: idx,
            });
        }
        Ok(())
    }
}

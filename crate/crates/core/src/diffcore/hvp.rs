//! Matrix-free Hessian-vector products via central finite differences of
//! gradients: H v = (g(theta + e v) - g(theta - e v)) / (2 e), with the
//! probe step scaled as e = eps_fd * (1 + ||theta||) / ||v||.

use crate::diffcore::params::ParamVector;
use crate::error::{Error, Result};

pub const DEFAULT_EPS_FD: f64 = 1e-4;
const MIN_DIRECTION_NORM: f64 = 1e-12;

/// Hessian-vector product operator around a fixed parameter point.
pub struct HvpOperator<'a, G> {
    grad_fn: G,
    theta: &'a ParamVector,
    eps_fd: f64,
}

impl<'a, G> HvpOperator<'a, G>
where
    G: Fn(&ParamVector) -> Result<ParamVector>,
{
    pub fn new(grad_fn: G, theta: &'a ParamVector) -> Self {
        Self {
            grad_fn,
            theta,
            eps_fd: DEFAULT_EPS_FD,
        }
    }

    pub fn with_eps(mut self, eps_fd: f64) -> Self {
        self.eps_fd = eps_fd;
        self
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn apply(&self, v: &ParamVector) -> Result<ParamVector> {
        if v.len() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                what: "hvp direction",
                expected: self.theta.len(),
                actual: v.len(),
            });
        }
        let v_norm = v.norm();
        if v_norm <= MIN_DIRECTION_NORM {
            return Err(Error::DegenerateVector {
                what: "hvp direction",
                norm: v_norm,
            });
        }
        let eps = self.eps_fd * (1.0 + self.theta.norm()) / v_norm;

        let mut plus = self.theta.clone();
        plus.axpy(eps, v);
        let mut minus = self.theta.clone();
        minus.axpy(-eps, v);

        let g_plus = (self.grad_fn)(&plus)?;
        let g_minus = (self.grad_fn)(&minus)?;

        let mut h = g_plus;
        h.axpy(-1.0, &g_minus);
        h.scale(1.0 / (2.0 * eps));
        h.check_finite("hessian-vector product")?;
        Ok(h)
    }
}

/// Central finite-difference gradient of a scalar function. Probe step per
/// coordinate is `rel_step * (1 + |theta_i|)`.
pub fn fd_gradient<F>(f: F, theta: &ParamVector, rel_step: f64) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    let mut grad = ParamVector::zeros(theta.len());
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let h = rel_step * (1.0 + theta[i].abs());
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad.check_finite("finite-difference gradient")?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_curvature() {
        // f(theta) = theta^2 at theta = 3: gradient 6, Hessian 2.
        let theta = ParamVector::from_vec(vec![3.0]);
        let grad = fd_gradient(|t| Ok(t[0] * t[0]), &theta, 1e-6).unwrap();
        assert_relative_eq!(grad[0], 6.0, max_relative = 1e-8);

        let op = HvpOperator::new(|t: &ParamVector| Ok(t.scaled(2.0)), &theta);
        let hv = op.apply(&ParamVector::from_vec(vec![1.0])).unwrap();
        assert_relative_eq!(hv[0], 2.0, max_relative = 1e-8);
    }

    #[test]
    fn diagonal_hessian() {
        // f = sum_i c_i theta_i^2 / 2 has gradient c .* theta and Hessian diag(c).
        let c = [1.0, 4.0, 9.0];
        let theta = ParamVector::from_vec(vec![0.5, -1.0, 2.0]);
        let grad_fn = move |t: &ParamVector| {
            Ok(ParamVector::from_vec(
                t.as_slice().iter().zip(c).map(|(v, ci)| ci * v).collect(),
            ))
        };
        let op = HvpOperator::new(grad_fn, &theta);
        let hv = op.apply(&ParamVector::from_vec(vec![1.0, 1.0, 1.0])).unwrap();
        for (got, want) in hv.as_slice().iter().zip(c) {
            assert_relative_eq!(*got, want, max_relative = 1e-6);
        }
    }

    #[test]
    fn rejects_near_zero_direction() {
        let theta = ParamVector::from_vec(vec![1.0]);
        let op = HvpOperator::new(|t: &ParamVector| Ok(t.clone()), &theta);
        let err = op.apply(&ParamVector::from_vec(vec![1e-300])).unwrap_err();
        assert!(matches!(err, Error::DegenerateVector { .. }));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let theta = ParamVector::from_vec(vec![1.0, 2.0]);
        let op = HvpOperator::new(|t: &ParamVector| Ok(t.clone()), &theta);
        assert!(op.apply(&ParamVector::from_vec(vec![1.0])).is_err());
    }
}

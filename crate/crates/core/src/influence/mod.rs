//! Influence-function estimates built on inverse-Hessian-vector products.
//!
//! The parameter influence of a training sample z is -H^-1 grad L(z); the
//! loss influence on a test sample z' is grad L(z')^T H^-1 grad L(z). The
//! group conflict statistic drops the Hessian and reduces to a plain inner
//! product against the summed group gradient, which is exactly the quantity
//! gradient surgery zeroes. A second-order group correction applies the
//! operator A v = p/(1-p) (v - H^-1 H_group v) with p the group fraction.

pub mod probe;
pub mod vae_target;

use crate::diffcore::{cg_solve, CgConfig, ParamVector};
use crate::error::{Error, Result};

pub use probe::{ConvexProbe, ProbeKind};
pub use vae_target::VaeInfluenceTarget;

/// Anything influence estimates can be computed against: per-sample losses
/// and gradients at the fitted point, plus (subset) Hessian-vector products.
pub trait InfluenceTarget {
    fn dim(&self) -> usize;
    fn n_train(&self) -> usize;
    fn sample_loss(&self, idx: usize) -> Result<f64>;
    fn sample_grad(&self, idx: usize) -> Result<ParamVector>;
    /// Mean-Hessian-vector product over the full training set.
    fn hvp(&self, v: &ParamVector) -> Result<ParamVector>;
    /// Mean-Hessian-vector product over a subset.
    fn subset_hvp(&self, idx: &[usize], v: &ParamVector) -> Result<ParamVector>;
}

#[derive(Debug, Clone, Copy)]
pub struct InfluenceConfig {
    pub damping: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            cg_tol: 1e-10,
            cg_max_iter: 500,
        }
    }
}

impl InfluenceConfig {
    fn cg(&self) -> CgConfig {
        CgConfig {
            damping: self.damping,
            tol: self.cg_tol,
            max_iter: self.cg_max_iter,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InfluenceResult {
    pub vector: ParamVector,
    pub rel_residual: f64,
    pub cg_iterations: usize,
    pub converged: bool,
}

fn solve_inverse_hvp<T: InfluenceTarget + ?Sized>(
    target: &T,
    rhs: &ParamVector,
    cfg: &InfluenceConfig,
) -> Result<(ParamVector, f64, usize, bool)> {
    let sol = cg_solve(|v| target.hvp(v), rhs, &cfg.cg())?;
    Ok((sol.x, sol.rel_residual, sol.iterations, sol.converged))
}

/// Parameter influence of training sample z: -H^-1 grad L(z).
pub fn influence_up_param<T: InfluenceTarget + ?Sized>(
    target: &T,
    z: usize,
    cfg: &InfluenceConfig,
) -> Result<InfluenceResult> {
    let g = target.sample_grad(z)?;
    let (x, rel_residual, cg_iterations, converged) = solve_inverse_hvp(target, &g, cfg)?;
    Ok(InfluenceResult {
        vector: x.scaled(-1.0),
        rel_residual,
        cg_iterations,
        converged,
    })
}

/// Loss influence of training sample z on test sample z':
/// grad L(z')^T H^-1 grad L(z).
pub fn influence_up_loss<T: InfluenceTarget + ?Sized>(
    target: &T,
    z: usize,
    z_prime: usize,
    cfg: &InfluenceConfig,
) -> Result<f64> {
    let g_z = target.sample_grad(z)?;
    let g_zp = target.sample_grad(z_prime)?;
    let (x, _, _, _) = solve_inverse_hvp(target, &g_z, cfg)?;
    Ok(g_zp.dot(&x))
}

/// Summed gradient over a group of training samples.
pub fn group_grad_sum<T: InfluenceTarget + ?Sized>(
    target: &T,
    group: &[usize],
) -> Result<ParamVector> {
    if group.is_empty() {
        return Err(Error::Empty("influence group"));
    }
    let mut sum = ParamVector::zeros(target.dim());
    for &z in group {
        sum.axpy(1.0, &target.sample_grad(z)?);
    }
    Ok(sum)
}

/// First-order group conflict: the plain inner product between the test
/// gradient and the summed group gradient. No Hessian enters; this is the
/// term an orthogonal projection of the group gradient sends to zero.
pub fn group_conflict<T: InfluenceTarget + ?Sized>(
    target: &T,
    group: &[usize],
    z_prime: usize,
) -> Result<f64> {
    let g_sum = group_grad_sum(target, group)?;
    let g_zp = target.sample_grad(z_prime)?;
    Ok(conflict_inner(&g_zp, &g_sum))
}

/// Inner product between a test gradient and an (possibly projected)
/// update direction.
pub fn conflict_inner(g_test: &ParamVector, direction: &ParamVector) -> f64 {
    g_test.dot(direction)
}

/// Loss influence of a whole group on z', through the inverse Hessian.
pub fn group_influence_up_loss<T: InfluenceTarget + ?Sized>(
    target: &T,
    group: &[usize],
    z_prime: usize,
    cfg: &InfluenceConfig,
) -> Result<f64> {
    let g_sum = group_grad_sum(target, group)?;
    let g_zp = target.sample_grad(z_prime)?;
    let (x, _, _, _) = solve_inverse_hvp(target, &g_sum, cfg)?;
    Ok(g_zp.dot(&x))
}

/// Second-order group influence direction. With u the summed group
/// gradient, v = H^-1 u and p = |group| / n:
///   A v = p/(1-p) (v - H^-1 H_group v)
/// where H_group is the mean Hessian over the group. The group fraction is
/// computed from the supplied group, never caller-set.
pub fn second_order_group_influence<T: InfluenceTarget + ?Sized>(
    target: &T,
    group: &[usize],
    cfg: &InfluenceConfig,
) -> Result<InfluenceResult> {
    let n = target.n_train();
    if group.len() >= n {
        return Err(Error::InvalidSplit(format!(
            "group of {} is not a strict subset of {} samples",
            group.len(),
            n
        )));
    }
    let p = group.len() as f64 / n as f64;
    let u = group_grad_sum(target, group)?;
    let (v, res1, it1, conv1) = solve_inverse_hvp(target, &u, cfg)?;

    let h_group_v = target.subset_hvp(group, &v)?;
    let (w, res2, it2, conv2) = solve_inverse_hvp(target, &h_group_v, cfg)?;

    let mut out = v;
    out.axpy(-1.0, &w);
    out.scale(p / (1.0 - p));
    Ok(InfluenceResult {
        vector: out,
        rel_residual: res1.max(res2),
        cg_iterations: it1 + it2,
        converged: conv1 && conv2,
    })
}

/// Oracle: exact leave-one-out parameter shift theta_loo - theta_hat from
/// a full refit of the convex probe.
pub fn loo_retrain_oracle(probe: &ConvexProbe, z: usize) -> Result<ParamVector> {
    let loo = probe.loo_theta(z)?;
    Ok(loo.sub(&probe.theta()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn logistic_probe(n: usize, d: usize, seed: u64, lambda: f64) -> ConvexProbe {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut m = 0.0;
            for j in 0..d {
                let v: f64 = rng.gen_range(-1.0..1.0);
                x[(i, j)] = v;
                m += v * w[j];
            }
            let noise: f64 = rng.gen_range(-0.5..0.5);
            y[i] = if m + noise >= 0.0 { 1.0 } else { -1.0 };
        }
        ConvexProbe::fit(ProbeKind::Logistic, x, y, lambda).unwrap()
    }

    /// Linear probe engineered so the mean Hessian is exactly the identity:
    /// n = d samples, x_i = sqrt(d (1 - lambda)) e_i.
    fn identity_hessian_probe(d: usize, lambda: f64) -> ConvexProbe {
        let scale = (d as f64 * (1.0 - lambda)).sqrt();
        let x = DMatrix::from_fn(d, d, |r, c| if r == c { scale } else { 0.0 });
        let y = DVector::from_fn(d, |i, _| (i as f64 * 0.37).sin());
        ConvexProbe::fit(ProbeKind::Linear, x, y, lambda).unwrap()
    }

    #[test]
    fn identity_hessian_param_influence_is_negated_gradient() {
        let probe = identity_hessian_probe(6, 0.25);
        let h = probe.mean_hessian_dense();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((h[(i, j)] - want).abs() < 1e-12, "H[{i},{j}] = {}", h[(i, j)]);
            }
        }
        let cfg = InfluenceConfig {
            damping: 0.0,
            ..InfluenceConfig::default()
        };
        let z = 2;
        let res = influence_up_param(&probe, z, &cfg).unwrap();
        let g = probe.sample_grad(z).unwrap();
        let diff = res.vector.add(&g).norm();
        assert!(diff < 1e-9, "difference {diff:.3e}");
        assert!(res.converged);
    }

    #[test]
    fn loss_influence_is_symmetric() {
        let probe = logistic_probe(80, 8, 21, 0.05);
        let cfg = InfluenceConfig::default();
        let a = influence_up_loss(&probe, 3, 40, &cfg).unwrap();
        let b = influence_up_loss(&probe, 40, 3, &cfg).unwrap();
        assert!(
            (a - b).abs() <= 1e-8 * (1.0 + a.abs()),
            "asymmetry {a} vs {b}"
        );
    }

    #[test]
    fn self_influence_is_non_negative() {
        let probe = logistic_probe(60, 6, 9, 0.05);
        let cfg = InfluenceConfig::default();
        for z in [0, 10, 30, 59] {
            let v = influence_up_loss(&probe, z, z, &cfg).unwrap();
            assert!(v >= -1e-12, "self influence {v} at {z}");
        }
    }

    #[test]
    fn group_conflict_is_additive_in_members() {
        let probe = logistic_probe(50, 5, 33, 0.05);
        let zp = 49;
        let whole = group_conflict(&probe, &[1, 2, 3], zp).unwrap();
        let parts: f64 = [1, 2, 3]
            .iter()
            .map(|&z| group_conflict(&probe, &[z], zp).unwrap())
            .sum();
        assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn projection_zeroes_group_conflict_and_shrinks_whitened_influence() {
        // With H = I, the loss influence of the group direction reduces to
        // the same inner product the projection removes.
        let probe = identity_hessian_probe(8, 0.25);
        let group = [0usize, 3, 5];
        let zp = 7;
        let g_sum = group_grad_sum(&probe, &group).unwrap();
        let g_zp = probe.sample_grad(zp).unwrap();

        let before = conflict_inner(&g_zp, &g_sum);
        assert!(before.abs() > 1e-8, "fixture needs a real conflict");

        let projected =
            crate::surgeon::project_gradient(&g_sum, &g_zp, crate::surgeon::ProjectionRule::Always);
        let after = conflict_inner(&g_zp, &projected.grad);
        assert!(after.abs() <= 1e-10 * before.abs() + 1e-14);

        // Influence through the (identity) Hessian shrinks accordingly.
        let cfg = InfluenceConfig {
            damping: 0.0,
            ..InfluenceConfig::default()
        };
        let sol_before = cg_solve(|v| probe.hvp(v), &g_sum, &cfg.cg()).unwrap();
        let sol_after = cg_solve(|v| probe.hvp(v), &projected.grad, &cfg.cg()).unwrap();
        let infl_before = g_zp.dot(&sol_before.x);
        let infl_after = g_zp.dot(&sol_after.x);
        assert!(infl_after.abs() < infl_before.abs());
    }

    #[test]
    fn second_order_matches_dense_algebra() {
        let probe = logistic_probe(60, 7, 55, 0.05);
        let group: Vec<usize> = (0..12).collect();
        let cfg = InfluenceConfig {
            damping: 1e-9,
            cg_tol: 1e-12,
            cg_max_iter: 2000,
        };
        let got = second_order_group_influence(&probe, &group, &cfg).unwrap();

        let h = probe.mean_hessian_dense();
        let h_inv = h.clone().try_inverse().unwrap();
        let hg = probe.subset_hessian_dense(&group).unwrap();
        let u = probe::to_dv(&group_grad_sum(&probe, &group).unwrap());
        let p = group.len() as f64 / probe.n() as f64;
        let v = &h_inv * u;
        let want = (&v - &h_inv * (&hg * &v)) * (p / (1.0 - p));

        let diff = (probe::to_dv(&got.vector) - &want).norm() / want.norm();
        assert!(diff < 1e-6, "relative difference {diff:.3e}");
    }

    #[test]
    fn group_must_be_strict_subset() {
        let probe = logistic_probe(20, 4, 2, 0.05);
        let all: Vec<usize> = (0..20).collect();
        assert!(second_order_group_influence(&probe, &all, &InfluenceConfig::default()).is_err());
        assert!(group_grad_sum(&probe, &[]).is_err());
    }

    #[test]
    fn loo_oracle_reports_a_shift() {
        let probe = logistic_probe(40, 5, 77, 0.05);
        let shift = loo_retrain_oracle(&probe, 11).unwrap();
        assert!(shift.norm() > 0.0);
        assert!(shift.norm() < 1.0, "LOO shift should be small: {}", shift.norm());
    }

    #[test]
    fn outlier_dominates_both_rankings() {
        // Linear fixture with one gross outlier: the sample with the
        // largest self-influence is also the one whose removal moves the
        // parameters the most.
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let n = 30;
        let d = 3;
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            for j in 0..d {
                x[(i, j)] = rng.gen_range(-1.0..1.0);
            }
            y[i] = x.row(i).sum() * 0.3 + rng.gen_range(-0.05..0.05);
        }
        y[17] += 25.0;
        let probe = ConvexProbe::fit(ProbeKind::Linear, x, y, 0.05).unwrap();
        let cfg = InfluenceConfig::default();

        let best_self = (0..n)
            .max_by(|&a, &b| {
                let ia = influence_up_loss(&probe, a, a, &cfg).unwrap();
                let ib = influence_up_loss(&probe, b, b, &cfg).unwrap();
                ia.partial_cmp(&ib).unwrap()
            })
            .unwrap();
        let best_shift = (0..n)
            .max_by(|&a, &b| {
                let sa = loo_retrain_oracle(&probe, a).unwrap().norm();
                let sb = loo_retrain_oracle(&probe, b).unwrap().norm();
                sa.partial_cmp(&sb).unwrap()
            })
            .unwrap();
        assert_eq!(best_self, 17);
        assert_eq!(best_shift, 17);
    }
}

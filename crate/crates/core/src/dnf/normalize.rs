//! Weight normalization: the MMD projection of a raw weight vector onto the floored simplex,
//!
//!   min (x - nu)^T K (x - nu)   s.t.   1^T x = 1,  x_l >= eps,
//!
//! solved with a primal active-set method over the lower bounds. The equality constraint
//! is handled inside each equality-constrained subproblem by a scalar multiplier.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::GramContext;

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub weights: DVector<f64>,
    pub iterations: usize,
    /// Max of stationarity, primal and dual infeasibility at the returned point.
    pub kkt_residual: f64,
    /// `(x - nu)^T K (x - nu)`.
    pub objective: f64,
}

/// Projects `nu` in the metric of the regularized Gram matrix `K + sigma_reg I`.
pub fn normalize_weights(nu: &DVector<f64>, gram: &GramContext, eps: f64) -> Result<QpSolution> {
    solve_simplex_qp(&gram.regularized(), nu, eps)
}

/// Clip to the floor, then rescale the excess so the weights sum to one.
fn warm_start(target: &DVector<f64>, eps: f64) -> DVector<f64> {
    let m = target.len();
    let excess = target.map(|v| (v - eps).max(0.0));
    let total = excess.sum();
    let budget = 1.0 - eps * m as f64;
    if total > 0.0 && total.is_finite() {
        excess.map(|e| eps + e * budget / total)
    } else {
        DVector::from_element(m, 1.0 / m as f64)
    }
}

fn kkt_residual(h: &DMatrix<f64>, target: &DVector<f64>, x: &DVector<f64>, active: &[bool], eps: f64) -> f64 {
    let g = h * (x - target);
    let free: Vec<usize> = (0..x.len()).filter(|&i| !active[i]).collect();
    let lambda = -free.iter().map(|&i| g[i]).sum::<f64>() / free.len().max(1) as f64;
    let mut r = (x.sum() - 1.0).abs();
    for i in 0..x.len() {
        r = r.max(eps - x[i]);
        let mu = g[i] + lambda;
        if active[i] {
            r = r.max(-mu);
        } else {
            r = r.max(mu.abs());
        }
    }
    r
}

/// Minimizes `(x - target)^T H (x - target)` over `{x : 1^T x = 1, x >= eps}` for SPD `H`.
pub fn solve_simplex_qp(h: &DMatrix<f64>, target: &DVector<f64>, eps: f64) -> Result<QpSolution> {
    let m = target.len();
    if h.shape() != (m, m) {
        return Err(Error::Dimension {
            context: "QP metric",
            expected: m,
            got: h.nrows(),
        });
    }
    if m == 0 {
        return Err(Error::InvalidArgument("empty weight vector".into()));
    }
    if !(eps >= 0.0) || eps * m as f64 >= 1.0 {
        return Err(Error::Config(format!(
            "weight floor {eps} is infeasible for {m} points (need eps * m < 1)"
        )));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("raw weights are not finite".into()));
    }

    let mut x = warm_start(target, eps);
    let mut active: Vec<bool> = x.iter().map(|&v| v <= eps).collect();
    for (xi, &a) in x.iter_mut().zip(&active) {
        if a {
            *xi = eps;
        }
    }
    let h_target = h * target;
    let tol_mu = 1e-12 * h.amax().max(f64::MIN_POSITIVE);
    let max_iter = 20 * m + 100;

    for iter in 1..=max_iter {
        let free: Vec<usize> = (0..m).filter(|&i| !active[i]).collect();
        let n_active = m - free.len();
        let budget = 1.0 - eps * n_active as f64;

        let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
        let c = DVector::from_fn(free.len(), |a, _| {
            let i = free[a];
            let fixed: f64 = (0..m).filter(|&j| active[j]).map(|j| h[(i, j)]).sum();
            h_target[i] - eps * fixed
        });
        let chol = hff
            .cholesky()
            .ok_or_else(|| Error::Numerical("QP metric restricted to the free set is not positive definite".into()))?;
        let u = chol.solve(&c);
        let v = chol.solve(&DVector::from_element(free.len(), 1.0));
        let lambda = (u.sum() - budget) / v.sum();
        let candidate = &u - &v * lambda;

        let mut step = DVector::zeros(free.len());
        for (a, &i) in free.iter().enumerate() {
            step[a] = candidate[a] - x[i];
        }

        if step.amax() <= 1e-13 * (1.0 + x.amax()) {
            for (a, &i) in free.iter().enumerate() {
                x[i] = candidate[a];
            }
            let g = h * (&x - target);
            let release = (0..m)
                .filter(|&i| active[i])
                .map(|i| (i, g[i] + lambda))
                .filter(|&(_, mu)| mu < -tol_mu)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match release {
                Some((i, _)) => active[i] = false,
                None => {
                    let kkt_residual = kkt_residual(h, target, &x, &active, eps);
                    let d = &x - target;
                    let objective = d.dot(&(h * &d));
                    return Ok(QpSolution {
                        weights: x,
                        iterations: iter,
                        kkt_residual,
                        objective,
                    });
                }
            }
        } else {
            let mut alpha = 1.0;
            let mut blocking = None;
            for (a, &i) in free.iter().enumerate() {
                if step[a] < 0.0 {
                    let t = (eps - x[i]) / step[a];
                    if t < alpha {
                        alpha = t.max(0.0);
                        blocking = Some(i);
                    }
                }
            }
            for (a, &i) in free.iter().enumerate() {
                x[i] += alpha * step[a];
            }
            if let Some(i) = blocking {
                x[i] = eps;
                active[i] = true;
            }
        }
    }
    Err(Error::Numerical(format!("weight normalization did not converge in {max_iter} iterations")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_gram, KernelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn feasible_target_is_returned_unchanged() {
        let m = 7;
        let nu = DVector::from_element(m, 1.0 / m as f64);
        let sol = solve_simplex_qp(&DMatrix::identity(m, m), &nu, 1e-3).unwrap();
        assert!((sol.weights - nu).amax() <= 1e-10);
        assert!(sol.objective <= 1e-20);
    }

    #[test]
    fn feasible_nonuniform_target_is_returned_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = DMatrix::from_fn(2, 12, |_, _| rng.random_range(-2.0..2.0));
        let g = build_gram(&KernelSpec::gaussian(1.0), &pts, None).unwrap();
        let raw = DVector::from_fn(12, |_, _| rng.random_range(0.1..1.0));
        let nu = &raw / raw.sum();
        let sol = normalize_weights(&nu, &g, 1e-6).unwrap();
        assert!((sol.weights - nu).amax() <= 1e-10);
    }

    #[test]
    fn two_point_euclidean_projection() {
        let nu = DVector::from_column_slice(&[1.2, -0.2]);
        let sol = solve_simplex_qp(&DMatrix::identity(2, 2), &nu, 0.0).unwrap();
        assert!((sol.weights[0] - 1.0).abs() < 1e-15);
        assert!(sol.weights[1].abs() < 1e-15);
        assert!(sol.kkt_residual < 1e-12);
    }

    #[test]
    fn floor_is_respected() {
        let nu = DVector::from_column_slice(&[2.0, -0.5, -0.5]);
        let sol = solve_simplex_qp(&DMatrix::identity(3, 3), &nu, 0.01).unwrap();
        assert_eq!(sol.weights[1], 0.01);
        assert_eq!(sol.weights[2], 0.01);
        assert!((sol.weights.sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn infeasible_floor_is_a_configuration_error() {
        let nu = DVector::from_element(4, 0.25);
        assert!(matches!(solve_simplex_qp(&DMatrix::identity(4, 4), &nu, 0.25), Err(Error::Config(_))));
    }

    #[test]
    fn random_instances_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let m = rng.random_range(2..30);
            let pts = DMatrix::from_fn(3, m, |_, _| rng.random_range(-3.0..3.0));
            let g = build_gram(&KernelSpec::laplace(2.0), &pts, Some(1e-6)).unwrap();
            let nu: DVector<f64> = DVector::from_fn(m, |_, _| rng.random_range(-0.5..1.0));
            let nu = &nu / nu.sum().abs().max(0.1);
            let eps = 1e-6 / m as f64;
            let sol = normalize_weights(&nu, &g, eps).unwrap();
            assert!(sol.kkt_residual <= 1e-8, "kkt {}", sol.kkt_residual);
            assert!(sol.weights.iter().all(|&w| w >= eps - 1e-12));
            assert!((sol.weights.sum() - 1.0).abs() <= 1e-12);
        }
    }
}

//! Error metrics over Monte Carlo samples.
//!
//! For each step `k`, with `M` estimate samples, `RMSE_k = sqrt(mean |e|^2)` and
//! `AEE_k = mean |e|` over the chosen sub-vector; table cells average these over `k`.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};

/// Position and velocity components of the tracking state `[x, vx, y, vy, ...]`.
pub const POSITION: [usize; 2] = [0, 2];
pub const VELOCITY: [usize; 2] = [1, 3];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorStats {
    pub rmse: f64,
    pub aee: f64,
    pub rmse_steps: Vec<f64>,
    pub aee_steps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsTable {
    pub rmse_pos: f64,
    pub rmse_vel: f64,
    pub aee_pos: f64,
    pub aee_vel: f64,
    #[serde(skip)]
    pub position: ErrorStats,
    #[serde(skip)]
    pub velocity: ErrorStats,
}

/// `truth[j][k]` and `estimates[j][k]` for sample `j` and step `k`.
pub fn error_stats(truth: &[Vec<DVector<f64>>], estimates: &[Vec<DVector<f64>>], components: &[usize]) -> Result<ErrorStats> {
    if truth.len() != estimates.len() {
        return Err(Error::Dimension {
            context: "metric samples",
            expected: truth.len(),
            got: estimates.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one sample".into()));
    }
    let steps = truth[0].len();
    for (t, e) in truth.iter().zip(estimates) {
        if t.len() != steps || e.len() != steps {
            return Err(Error::Dimension {
                context: "metric trajectory length",
                expected: steps,
                got: if t.len() != steps { t.len() } else { e.len() },
            });
        }
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("metrics need at least one step".into()));
    }
    let samples = truth.len() as f64;
    let mut rmse_steps = Vec::with_capacity(steps);
    let mut aee_steps = Vec::with_capacity(steps);
    for k in 0..steps {
        let (mut sq, mut abs) = (0.0, 0.0);
        for (t, e) in truth.iter().zip(estimates) {
            let d2: f64 = components.iter().map(|&c| (e[k][c] - t[k][c]).powi(2)).sum();
            sq += d2;
            abs += d2.sqrt();
        }
        rmse_steps.push((sq / samples).sqrt());
        aee_steps.push(abs / samples);
    }
    Ok(ErrorStats {
        rmse: rmse_steps.iter().sum::<f64>() / steps as f64,
        aee: aee_steps.iter().sum::<f64>() / steps as f64,
        rmse_steps,
        aee_steps,
    })
}

pub fn compute_metrics(truth: &[Vec<DVector<f64>>], estimates: &[Vec<DVector<f64>>]) -> Result<MetricsTable> {
    let position = error_stats(truth, estimates, &POSITION)?;
    let velocity = error_stats(truth, estimates, &VELOCITY)?;
    Ok(MetricsTable {
        rmse_pos: position.rmse,
        rmse_vel: velocity.rmse,
        aee_pos: position.aee,
        aee_vel: velocity.aee,
        position,
        velocity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn perfect_estimates() {
        let t = vec![vec![v(&[1.0, 2.0, 3.0, 4.0]); 3]; 2];
        let m = compute_metrics(&t, &t).unwrap();
        assert_eq!((m.rmse_pos, m.rmse_vel, m.aee_pos, m.aee_vel), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn single_run_constant_error() {
        let t = vec![vec![v(&[0.0, 0.0, 0.0, 0.0]); 4]];
        let e = vec![vec![v(&[3.0, 0.0, 4.0, 0.0]); 4]];
        let m = compute_metrics(&t, &e).unwrap();
        assert!((m.rmse_pos - 5.0).abs() < 1e-15);
        assert!((m.aee_pos - 5.0).abs() < 1e-15);
    }

    #[test]
    fn two_scalar_runs() {
        let t = vec![vec![v(&[0.0])], vec![v(&[0.0])]];
        let e = vec![vec![v(&[0.0])], vec![v(&[2.0])]];
        let s = error_stats(&t, &e, &[0]).unwrap();
        assert!((s.aee - 1.0).abs() < 1e-15);
        assert!((s.rmse - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let t = vec![vec![v(&[0.0]); 3]];
        let e = vec![vec![v(&[0.0]); 2]];
        assert!(error_stats(&t, &e, &[0]).is_err());
        assert!(error_stats(&t, &[], &[0]).is_err());
    }

    proptest! {
        #[test]
        fn aee_never_exceeds_rmse(errs in proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 4 * 5), 1..6)) {
            let truth: Vec<Vec<DVector<f64>>> = errs.iter().map(|_| vec![DVector::zeros(4); 5]).collect();
            let est: Vec<Vec<DVector<f64>>> = errs
                .iter()
                .map(|e| (0..5).map(|k| DVector::from_column_slice(&e[4 * k..4 * k + 4])).collect())
                .collect();
            let m = compute_metrics(&truth, &est).unwrap();
            for (a, r) in m.position.aee_steps.iter().zip(&m.position.rmse_steps) {
                prop_assert!(*a <= r * (1.0 + 1e-12) + 1e-12);
            }
            prop_assert!(m.aee_pos <= m.rmse_pos * (1.0 + 1e-12) + 1e-12);
            prop_assert!(m.aee_vel <= m.rmse_vel * (1.0 + 1e-12) + 1e-12);
        }
    }
}

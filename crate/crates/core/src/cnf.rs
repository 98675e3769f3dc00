//! Centralized filter with all measurements fused at once, the classical Kalman filter,
//! and the identity-embedding path that connects the two.

use nalgebra::{DMatrix, DVector};

use crate::dnf::{
    build_embedding_gram, finish_update, initial_sample, measurement_sample, predict, predicted_measurement,
    FilterConfig, SharedStream,
};
use crate::embedding::{centered_weight, CenteredWeight, MeasurementSample, WeightedSample};
use crate::error::{Error, Result};
use crate::linalg::{block_diagonal, cholesky_spd, stack_rows, stack_vectors, symmetrize};
use crate::scenarios::{MotionModel, SensorModel};

/// One node's contribution: its observation, noiseless sample measurements and predicted mean.
#[derive(Clone, Debug)]
pub struct NodeMeasurement {
    pub y: DVector<f64>,
    pub meas: MeasurementSample,
    pub y_hat: DVector<f64>,
}

/// All node measurements stacked in node order.
#[derive(Clone, Debug)]
pub struct AugmentedMeasurement {
    pub y: DVector<f64>,
    /// Stacked `Y`, `n_y x m`.
    pub y_mat: DMatrix<f64>,
    /// Block-diagonal noise covariance.
    pub r: DMatrix<f64>,
    pub y_hat: DVector<f64>,
}

impl AugmentedMeasurement {
    pub fn dim(&self) -> usize {
        self.y.len()
    }
}

pub fn augment(parts: &[NodeMeasurement]) -> Result<AugmentedMeasurement> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("no node measurements to stack".into()))?;
    let m = first.meas.len();
    for p in parts {
        if p.meas.len() != m {
            return Err(Error::Dimension {
                context: "sample size across nodes",
                expected: m,
                got: p.meas.len(),
            });
        }
        if p.y.len() != p.meas.dim() || p.y_hat.len() != p.meas.dim() {
            return Err(Error::Dimension {
                context: "node measurement",
                expected: p.meas.dim(),
                got: p.y.len(),
            });
        }
    }
    let ys: Vec<_> = parts.iter().map(|p| p.y.clone()).collect();
    let hats: Vec<_> = parts.iter().map(|p| p.y_hat.clone()).collect();
    let mats: Vec<_> = parts.iter().map(|p| p.meas.y().clone()).collect();
    let rs: Vec<_> = parts.iter().map(|p| p.meas.r().clone()).collect();
    Ok(AugmentedMeasurement {
        y: stack_vectors(&ys),
        y_mat: stack_rows(&mats),
        r: block_diagonal(&rs),
        y_hat: stack_vectors(&hats),
    })
}

fn check_weights(w: &DVector<f64>, cw: &CenteredWeight, aug: &AugmentedMeasurement) -> Result<()> {
    let m = aug.y_mat.ncols();
    if w.len() != m || cw.w.nrows() != m {
        return Err(Error::Dimension {
            context: "centralized weights",
            expected: m,
            got: w.len(),
        });
    }
    Ok(())
}

/// `nu = w + W Y^T (Y W Y^T + R)^-1 (y - y_hat)`, solved in measurement space.
pub fn centralized_posterior_weights(
    w: &DVector<f64>,
    cw: &CenteredWeight,
    aug: &AugmentedMeasurement,
) -> Result<DVector<f64>> {
    check_weights(w, cw, aug)?;
    let wy = &cw.w * aug.y_mat.transpose();
    let s = symmetrize(&(&aug.y_mat * &wy + &aug.r));
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
    Ok(w + wy * chol.solve(&(&aug.y - &aug.y_hat)))
}

/// The same weights through the `m x m` form `w + W^1/2 Gamma^-1 xi` with
/// `Gamma = W^1/2 Y^T R^-1 Y W^1/2 + I` and `xi = W^1/2 Y^T R^-1 (y - y_hat)`.
pub fn centralized_posterior_weights_gamma_form(
    w: &DVector<f64>,
    cw: &CenteredWeight,
    aug: &AugmentedMeasurement,
) -> Result<DVector<f64>> {
    check_weights(w, cw, aug)?;
    let chol = cholesky_spd(&aug.r, "R")?;
    let yw = &aug.y_mat * &cw.w_half;
    let mut gamma = symmetrize(&(yw.transpose() * chol.solve(&yw)));
    for i in 0..gamma.nrows() {
        gamma[(i, i)] += 1.0;
    }
    let xi = yw.transpose() * chol.solve(&(&aug.y - &aug.y_hat));
    crate::dnf::posterior_weights(w, &cw.w_half, &gamma, &xi)
}

/// `(F x, F P F^T + Q)`.
pub fn kalman_predict(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    f: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    (f * x, symmetrize(&(f * p * f.transpose() + q)))
}

/// Measurement update with the Joseph-form covariance.
pub fn kalman_update(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if h.ncols() != x.len() || h.nrows() != y.len() || r.shape() != (y.len(), y.len()) {
        return Err(Error::Dimension {
            context: "Kalman update",
            expected: y.len(),
            got: h.nrows(),
        });
    }
    let s = symmetrize(&(h * p * h.transpose() + r));
    let chol = cholesky_spd(&s, "innovation covariance")?;
    let gain = chol.solve(&(h * p)).transpose();
    let x_new = x + &gain * (y - h * x);
    let a = DMatrix::identity(x.len(), x.len()) - &gain * h;
    let p_new = &a * p * a.transpose() + &gain * r * gain.transpose();
    Ok((x_new, symmetrize(&p_new)))
}

#[allow(clippy::too_many_arguments)]
pub fn kalman_step(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    f: &DMatrix<f64>,
    q: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (xp, pp) = kalman_predict(x, p, f, q);
    kalman_update(&xp, &pp, h, r, y)
}

/// Posterior mean of a linear-Gaussian update computed two ways.
#[derive(Clone, Debug)]
pub struct IdentityUpdate {
    /// `Phi nu` with `nu` from the embedding update under `phi(x) = x`.
    pub via_embedding: DVector<f64>,
    /// Kalman update of the sample mean `Phi w` and covariance `Phi W Phi^T`.
    pub via_kalman: DVector<f64>,
    pub kalman_covariance: DMatrix<f64>,
    pub nu: DVector<f64>,
}

pub fn identity_embedding_update(
    sample: &WeightedSample,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<IdentityUpdate> {
    let phi = sample.points();
    let w = sample.weights();
    let cw = centered_weight(w)?;
    let meas = MeasurementSample::new(h * phi, r.clone())?;
    let y_hat = meas.y() * w;
    let aug = augment(&[NodeMeasurement {
        y: y.clone(),
        meas,
        y_hat,
    }])?;
    let nu = centralized_posterior_weights(w, &cw, &aug)?;
    let mean = phi * w;
    let cov = symmetrize(&(phi * &cw.w * phi.transpose()));
    let (via_kalman, kalman_covariance) = kalman_update(&mean, &cov, h, r, y)?;
    Ok(IdentityUpdate {
        via_embedding: phi * &nu,
        via_kalman,
        kalman_covariance,
        nu,
    })
}

#[derive(Clone, Debug)]
pub struct CentralReport {
    pub estimate: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub prior: WeightedSample,
    pub nu: DVector<f64>,
    pub nu_tilde: DVector<f64>,
    pub qp_iterations: usize,
}

/// Fusion-centre filter seeing every sensor. Seeded like [`crate::dnf::DnfNetwork`], it draws
/// the same prior sample and prediction noise as the distributed nodes.
#[derive(Clone, Debug)]
pub struct CentralizedFilter {
    config: FilterConfig,
    sensors: Vec<SensorModel>,
    sample: WeightedSample,
    stream: SharedStream,
}

impl CentralizedFilter {
    pub fn new(
        config: FilterConfig,
        sensors: Vec<SensorModel>,
        prior_mean: &DVector<f64>,
        prior_cov: &DMatrix<f64>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if sensors.is_empty() {
            return Err(Error::InvalidArgument("centralized filter needs at least one sensor".into()));
        }
        let mut stream = SharedStream::new(seed);
        let sample = initial_sample(prior_mean, prior_cov, config.samples, &mut stream)?;
        Ok(Self {
            config,
            sensors,
            sample,
            stream,
        })
    }

    pub fn sample(&self) -> &WeightedSample {
        &self.sample
    }

    pub fn step(&mut self, motion: &MotionModel, measurements: &[DVector<f64>]) -> Result<CentralReport> {
        if measurements.len() != self.sensors.len() {
            return Err(Error::Dimension {
                context: "measurements per step",
                expected: self.sensors.len(),
                got: measurements.len(),
            });
        }
        let predicted = predict(&self.sample, motion, &mut self.stream)?;
        let gram = build_embedding_gram(&self.config.embedding, predicted.points(), self.config.sigma_reg)?;
        let cw = centered_weight(predicted.weights())?;
        let parts = self
            .sensors
            .iter()
            .zip(measurements)
            .map(|(s, y)| {
                let meas = measurement_sample(s, predicted.points())?;
                let y_hat = predicted_measurement(&self.config.embedding, &gram, &meas, predicted.weights())?;
                Ok(NodeMeasurement {
                    y: y.clone(),
                    meas,
                    y_hat,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let aug = augment(&parts)?;
        let nu = centralized_posterior_weights(predicted.weights(), &cw, &aug)?;
        let post = finish_update(&self.config, &predicted, &gram, &nu, &mut self.stream)?;
        self.sample = post.next;
        Ok(CentralReport {
            estimate: post.estimate,
            covariance: post.covariance,
            prior: predicted,
            nu,
            nu_tilde: post.nu_tilde,
            qp_iterations: post.qp.iterations,
        })
    }
}

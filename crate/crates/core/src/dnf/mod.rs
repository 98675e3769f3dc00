//! Distributed filter: each node predicts a shared particle set, forms its local
//! `(Gamma, xi)` terms from its own measurement, mixes them with its neighbours by
//! average consensus, and then applies the kernel mean embedding update locally.

pub mod normalize;
pub mod resample;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::consensus::{run_consensus, ConsensusLedger, ConsensusWeights, StopRule};
use crate::embedding::{
    centered_weight, default_epsilon, fit_measurement_operator, predicted_measurement_mean, MeasurementSample,
    WeightedSample,
};
use crate::error::{Error, Result};
use crate::kernels::{default_sigma_reg, GramContext, KernelSpec};
use crate::linalg::{psd_sqrt, symmetrize};
use crate::scenarios::{MotionModel, SensorModel};

pub use normalize::{normalize_weights, solve_simplex_qp, QpSolution};
pub use resample::{effective_sample_size, resample, resample_with, ResamplingPolicy, SharedStream};

/// Feature map used for the embedding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embedding {
    Kernel(KernelSpec),
    /// `phi(x) = x`: the linear kernel, with the predicted measurement taken as `Y w`.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub samples: usize,
    /// Weight floor; `1e-6 / samples` when unset.
    pub epsilon: Option<f64>,
    /// Gram regularizer; `1e-8 * trace(K) / m` when unset.
    pub sigma_reg: Option<f64>,
    pub embedding: Embedding,
    pub consensus: StopRule,
    pub resampling: ResamplingPolicy,
}

impl FilterConfig {
    pub fn new(samples: usize, kernel: KernelSpec) -> Self {
        Self {
            samples,
            epsilon: None,
            sigma_reg: None,
            embedding: Embedding::Kernel(kernel),
            consensus: StopRule::default(),
            resampling: ResamplingPolicy::default(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or_else(|| default_epsilon(self.samples))
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config(format!("need at least 2 samples, got {}", self.samples)));
        }
        let eps = self.epsilon();
        if !(eps >= 0.0) || eps * self.samples as f64 >= 1.0 {
            return Err(Error::Config(format!(
                "weight floor {eps} is infeasible for {} samples (need eps * m < 1)",
                self.samples
            )));
        }
        if let Some(r) = self.sigma_reg {
            if !(r >= 0.0) {
                return Err(Error::Config(format!("sigma_reg must be nonnegative, got {r}")));
            }
        }
        if let Embedding::Kernel(k) = &self.embedding {
            k.validate()?;
        }
        self.consensus.validate()?;
        self.resampling.validate()
    }
}

/// `m` draws from `N(mean, cov)` with uniform weights.
pub fn initial_sample(mean: &DVector<f64>, cov: &DMatrix<f64>, m: usize, stream: &mut SharedStream) -> Result<WeightedSample> {
    if cov.shape() != (mean.len(), mean.len()) {
        return Err(Error::Dimension {
            context: "prior covariance",
            expected: mean.len(),
            got: cov.nrows(),
        });
    }
    let root = psd_sqrt(&symmetrize(cov));
    let mut points = DMatrix::zeros(mean.len(), m);
    for l in 0..m {
        let z = stream.standard_normal(mean.len());
        points.set_column(l, &(mean + &root * z));
    }
    WeightedSample::uniform(points)
}

/// Pushes every point through the motion model with its own noise draw; weights are kept.
pub fn predict(sample: &WeightedSample, motion: &MotionModel, stream: &mut SharedStream) -> Result<WeightedSample> {
    let mut points = DMatrix::zeros(sample.state_dim(), sample.len());
    for (l, col) in sample.points().column_iter().enumerate() {
        let z = motion.sample_noise(stream.rng());
        points.set_column(l, &motion.propagate(&col.clone_owned(), &z)?);
    }
    WeightedSample::new(points, sample.weights().clone())
}

/// Gram matrix for the chosen embedding; the identity embedding uses `K = Phi^T Phi`.
pub fn build_embedding_gram(embedding: &Embedding, points: &DMatrix<f64>, sigma_reg: Option<f64>) -> Result<GramContext> {
    match embedding {
        Embedding::Kernel(spec) => crate::kernels::build_gram(spec, points, sigma_reg),
        Embedding::Identity => {
            let k = symmetrize(&(points.transpose() * points));
            let reg = sigma_reg.unwrap_or_else(|| default_sigma_reg(&k));
            GramContext::from_matrix(points.clone(), k, reg)
        }
    }
}

/// Noiseless sensor outputs at every sample point.
pub fn measurement_sample(sensor: &SensorModel, points: &DMatrix<f64>) -> Result<MeasurementSample> {
    MeasurementSample::from_model(points, sensor.noise_covariance().clone(), |x| sensor.h(x))
}

/// Predicted measurement mean: `B^T K w` for kernels, `Y w` for the identity embedding.
pub fn predicted_measurement(
    embedding: &Embedding,
    gram: &GramContext,
    meas: &MeasurementSample,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    match embedding {
        Embedding::Kernel(_) => {
            let b = fit_measurement_operator(gram, meas)?;
            predicted_measurement_mean(gram, &b, w)
        }
        Embedding::Identity => {
            if w.len() != meas.len() {
                return Err(Error::Dimension {
                    context: "predicted measurement",
                    expected: meas.len(),
                    got: w.len(),
                });
            }
            Ok(meas.y() * w)
        }
    }
}

/// Local consensus terms of a node in an `n`-node network:
/// `Gamma = n W^1/2 Y^T R^-1 Y W^1/2 + I` and `xi = n W^1/2 Y^T R^-1 (y - y_hat)`.
pub fn init_consensus_terms(
    n: usize,
    y: &DVector<f64>,
    w_half: &DMatrix<f64>,
    meas: &MeasurementSample,
    y_hat: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let m = meas.len();
    if y.len() != meas.dim() || y_hat.len() != meas.dim() {
        return Err(Error::Dimension {
            context: "measurement vector",
            expected: meas.dim(),
            got: if y.len() != meas.dim() { y.len() } else { y_hat.len() },
        });
    }
    if w_half.shape() != (m, m) {
        return Err(Error::Dimension {
            context: "weight root",
            expected: m,
            got: w_half.nrows(),
        });
    }
    let chol = crate::linalg::cholesky_spd(meas.r(), "R")?;
    let yw = meas.y() * w_half;
    let r_inv_yw = chol.solve(&yw);
    let scale = n as f64;
    let mut gamma = symmetrize(&(yw.transpose() * &r_inv_yw * scale));
    for i in 0..m {
        gamma[(i, i)] += 1.0;
    }
    let xi = yw.transpose() * chol.solve(&(y - y_hat)) * scale;
    Ok((gamma, xi))
}

/// `nu = w + W^1/2 Gamma^-1 xi`.
pub fn posterior_weights(
    w: &DVector<f64>,
    w_half: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    xi: &DVector<f64>,
) -> Result<DVector<f64>> {
    let g = symmetrize(gamma);
    let z = match g.clone().cholesky() {
        Some(c) => c.solve(xi),
        None => g
            .lu()
            .solve(xi)
            .ok_or_else(|| Error::Numerical("consensus Gamma is singular".into()))?,
    };
    Ok(w + w_half * z)
}

/// Weighted mean and covariance of the sample.
pub fn state_estimate(points: &DMatrix<f64>, weights: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mean = points * weights;
    let mut cov = DMatrix::zeros(points.nrows(), points.nrows());
    for (l, col) in points.column_iter().enumerate() {
        let d = col - &mean;
        cov += weights[l] * &d * d.transpose();
    }
    (mean, symmetrize(&cov))
}

/// Outcome of the weight update shared by the distributed and centralized filters.
#[derive(Clone, Debug)]
pub(crate) struct Posterior {
    pub estimate: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub nu_tilde: DVector<f64>,
    pub qp: QpSolution,
    pub next: WeightedSample,
}

/// Normalizes `nu`, extracts the moments on the predicted points, and resamples per policy.
/// Always consumes `m` uniforms so that streams stay aligned whatever the policy decides.
pub(crate) fn finish_update(
    config: &FilterConfig,
    predicted: &WeightedSample,
    gram: &GramContext,
    nu: &DVector<f64>,
    stream: &mut SharedStream,
) -> Result<Posterior> {
    let qp = normalize_weights(nu, gram, config.epsilon())?;
    let nu_tilde = qp.weights.clone();
    let (estimate, covariance) = state_estimate(predicted.points(), &nu_tilde);
    let uniforms: Vec<f64> = (0..predicted.len()).map(|_| stream.uniform()).collect();
    let next = if config.resampling.should_resample(&nu_tilde) {
        resample_with(predicted.points(), &nu_tilde, &uniforms)?
    } else {
        WeightedSample::new(predicted.points().clone(), nu_tilde.clone())?
    };
    Ok(Posterior {
        estimate,
        covariance,
        nu_tilde,
        qp,
        next,
    })
}

#[derive(Clone, Debug)]
pub struct DnfNode {
    pub sensor: SensorModel,
    pub sample: WeightedSample,
    stream: SharedStream,
}

#[derive(Clone, Debug)]
pub struct NodeReport {
    pub estimate: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Predicted sample the update was applied to.
    pub prior: WeightedSample,
    pub nu: DVector<f64>,
    pub nu_tilde: DVector<f64>,
    pub qp_iterations: usize,
    pub qp_kkt_residual: f64,
    pub consensus_rounds: usize,
    pub bytes_gamma_xi: u64,
    pub bytes_raw: u64,
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub nodes: Vec<NodeReport>,
    pub ledger: ConsensusLedger,
    /// Largest entrywise difference between any node's posterior points and node 0's.
    pub point_drift: f64,
}

#[derive(Clone, Debug)]
pub struct DnfNetwork {
    config: FilterConfig,
    weights: ConsensusWeights,
    nodes: Vec<DnfNode>,
}

impl DnfNetwork {
    /// All nodes start from the same prior sample and hold identical copies of the noise stream.
    pub fn new(
        config: FilterConfig,
        sensors: Vec<SensorModel>,
        weights: ConsensusWeights,
        prior_mean: &DVector<f64>,
        prior_cov: &DMatrix<f64>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if sensors.len() != weights.node_count() {
            return Err(Error::Dimension {
                context: "network size",
                expected: weights.node_count(),
                got: sensors.len(),
            });
        }
        let mut stream = SharedStream::new(seed);
        let sample = initial_sample(prior_mean, prior_cov, config.samples, &mut stream)?;
        let nodes = sensors
            .into_iter()
            .map(|sensor| DnfNode {
                sensor,
                sample: sample.clone(),
                stream: stream.clone(),
            })
            .collect();
        Ok(Self { config, weights, nodes })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[DnfNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// One filtering step; `measurements[i]` is node `i`'s observation.
    pub fn step(&mut self, motion: &MotionModel, measurements: &[DVector<f64>]) -> Result<StepReport> {
        let n = self.nodes.len();
        if measurements.len() != n {
            return Err(Error::Dimension {
                context: "measurements per step",
                expected: n,
                got: measurements.len(),
            });
        }
        let m = self.config.samples;
        let mut locals = Vec::with_capacity(n);
        let mut payloads = Vec::with_capacity(n);
        let mut n_y = Vec::with_capacity(n);
        for (node, y) in self.nodes.iter_mut().zip(measurements) {
            let predicted = predict(&node.sample, motion, &mut node.stream)?;
            let gram = build_embedding_gram(&self.config.embedding, predicted.points(), self.config.sigma_reg)?;
            let cw = centered_weight(predicted.weights())?;
            let meas = measurement_sample(&node.sensor, predicted.points())?;
            let y_hat = predicted_measurement(&self.config.embedding, &gram, &meas, predicted.weights())?;
            let (gamma, xi) = init_consensus_terms(n, y, &cw.w_half, &meas, &y_hat)?;
            let mut payload = DMatrix::zeros(m, m + 1);
            payload.view_mut((0, 0), (m, m)).copy_from(&gamma);
            payload.set_column(m, &xi);
            payloads.push(payload);
            n_y.push(meas.dim());
            locals.push((predicted, gram, cw));
        }

        let (mixed, ledger) = run_consensus(&self.weights, payloads, self.config.consensus)?;
        let ledger = ledger.with_raw_encoding(m, &n_y);

        let mut reports = Vec::with_capacity(n);
        for (i, ((node, (predicted, gram, cw)), payload)) in self.nodes.iter_mut().zip(locals).zip(mixed).enumerate() {
            let gamma = payload.view((0, 0), (m, m)).clone_owned();
            let xi = payload.column(m).clone_owned();
            let nu = posterior_weights(predicted.weights(), &cw.w_half, &gamma, &xi)?;
            let post = finish_update(&self.config, &predicted, &gram, &nu, &mut node.stream)?;
            node.sample = post.next;
            reports.push(NodeReport {
                estimate: post.estimate,
                covariance: post.covariance,
                prior: predicted,
                nu,
                nu_tilde: post.nu_tilde,
                qp_iterations: post.qp.iterations,
                qp_kkt_residual: post.qp.kkt_residual,
                consensus_rounds: ledger.rounds,
                bytes_gamma_xi: ledger.sent_gamma_xi(i),
                bytes_raw: ledger.sent_raw(i),
            });
        }
        let reference = self.nodes[0].sample.points();
        let point_drift = self
            .nodes
            .iter()
            .map(|nd| (nd.sample.points() - reference).amax())
            .fold(0.0, f64::max);
        Ok(StepReport {
            nodes: reports,
            ledger,
            point_drift,
        })
    }
}

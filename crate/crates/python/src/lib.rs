//! Python bindings. Matrices cross the boundary as lists of rows; sample points as a list
//! of state vectors.

use std::path::Path;

use kme_filter::consensus::{metropolis_weights as metropolis, run_consensus, ConsensusGraph, StopRule};
use kme_filter::dnf::DnfNetwork;
use kme_filter::harness::ExperimentOptions;
use kme_filter::kernels::{build_gram, KernelSpec};
use kme_filter::scenarios::{load_bundled, simulate_truth, Overrides, Scenario, ScenarioConfig};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Rows = Vec<Vec<f64>>;

fn err(e: kme_filter::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn points(pts: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    Ok(matrix(pts)?.transpose())
}

fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn kernel(kind: &str, sigma: f64, c: f64, d: u32) -> PyResult<KernelSpec> {
    let spec = match kind {
        "gaussian" => KernelSpec::gaussian(sigma),
        "laplace" => KernelSpec::laplace(sigma),
        "polynomial" => KernelSpec::polynomial(c, d),
        other => return Err(PyValueError::new_err(format!("unknown kernel `{other}`"))),
    };
    spec.validate().map_err(err)?;
    Ok(spec)
}

fn load_scenario(spec: &str) -> PyResult<ScenarioConfig> {
    if Path::new(spec).exists() {
        ScenarioConfig::from_path(Path::new(spec)).map_err(err)
    } else {
        load_bundled(spec.trim_end_matches(".json")).map_err(err)
    }
}

/// Gram matrix of `points` (a list of state vectors).
#[pyfunction]
#[pyo3(signature = (pts, kind = "gaussian", sigma = 1.0, c = 1.0, d = 2))]
fn kernel_matrix(pts: Vec<Vec<f64>>, kind: &str, sigma: f64, c: f64, d: u32) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&kme_filter::kernels::kernel_matrix(&kernel(kind, sigma, c, d)?, &points(&pts)?)))
}

/// `(W, W^1/2)` for `W = diag(w) - w w^T`.
#[pyfunction]
fn centered_weight(w: Vec<f64>) -> PyResult<(Rows, Rows)> {
    let cw = kme_filter::embedding::centered_weight(&DVector::from_vec(w)).map_err(err)?;
    Ok((rows(&cw.w), rows(&cw.w_half)))
}

#[pyfunction]
fn metropolis_weights(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Vec<Vec<f64>>> {
    let g = ConsensusGraph::new(n, edges).map_err(err)?;
    Ok(rows(metropolis(&g).map_err(err)?.matrix()))
}

/// Average consensus on one vector per node. Returns `(values, rounds, converged)`.
#[pyfunction]
#[pyo3(signature = (n, edges, values, max_rounds = 500, tol = 1e-10))]
fn average_consensus(
    n: usize,
    edges: Vec<(usize, usize)>,
    values: Vec<Vec<f64>>,
    max_rounds: usize,
    tol: f64,
) -> PyResult<(Vec<Vec<f64>>, usize, bool)> {
    let a = metropolis(&ConsensusGraph::new(n, edges).map_err(err)?).map_err(err)?;
    let init = values.iter().map(|v| DMatrix::from_column_slice(v.len(), 1, v)).collect();
    let (out, ledger) = run_consensus(&a, init, StopRule { max_rounds, tol }).map_err(err)?;
    Ok((out.iter().map(|m| m.iter().copied().collect()).collect(), ledger.rounds, ledger.converged))
}

/// Projects raw weights onto the floored simplex in the Gram metric of `pts`.
#[pyfunction]
#[pyo3(signature = (nu, pts, kind = "gaussian", sigma = 1.0, eps = None, sigma_reg = None))]
fn normalize_weights<'py>(
    py: Python<'py>,
    nu: Vec<f64>,
    pts: Vec<Vec<f64>>,
    kind: &str,
    sigma: f64,
    eps: Option<f64>,
    sigma_reg: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let m = nu.len();
    let gram = build_gram(&kernel(kind, sigma, 1.0, 2)?, &points(&pts)?, sigma_reg).map_err(err)?;
    let eps = eps.unwrap_or_else(|| kme_filter::embedding::default_epsilon(m));
    let sol = kme_filter::dnf::normalize_weights(&DVector::from_vec(nu), &gram, eps).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("weights", vector(&sol.weights))?;
    d.set_item("iterations", sol.iterations)?;
    d.set_item("kkt_residual", sol.kkt_residual)?;
    d.set_item("objective", sol.objective)?;
    Ok(d)
}

/// One Kalman predict-update step. Returns `(x, P)`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn kalman_step(
    x: Vec<f64>,
    p: Vec<Vec<f64>>,
    f: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    y: Vec<f64>,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let (xn, pn) = kme_filter::cnf::kalman_step(
        &DVector::from_vec(x),
        &matrix(&p)?,
        &matrix(&f)?,
        &matrix(&q)?,
        &matrix(&h)?,
        &matrix(&r)?,
        &DVector::from_vec(y),
    )
    .map_err(err)?;
    Ok((vector(&xn), rows(&pn)))
}

/// Runs a Monte Carlo experiment and returns the summary as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, runs = None, seed = None, horizon = None, with_centralized = false, with_baseline = false))]
fn run_experiment<'py>(
    py: Python<'py>,
    scenario: &str,
    runs: Option<usize>,
    seed: Option<u64>,
    horizon: Option<usize>,
    with_centralized: bool,
    with_baseline: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = load_scenario(scenario)?;
    cfg.apply(&Overrides {
        runs,
        seed,
        horizon,
        ..Default::default()
    })
    .map_err(err)?;
    let sc = Scenario::from_config(cfg).map_err(err)?;
    let opts = ExperimentOptions {
        with_centralized,
        with_baseline,
    };
    let exp = py.detach(|| kme_filter::harness::run_experiment(&sc, opts)).map_err(err)?;
    let text = serde_json::to_string(&exp.summary).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A distributed filter over a scenario's sensor network, stepped from Python.
#[pyclass]
struct Network {
    scenario: Scenario,
    net: DnfNetwork,
}

#[pymethods]
impl Network {
    #[new]
    #[pyo3(signature = (scenario, seed = 0))]
    fn new(scenario: &str, seed: u64) -> PyResult<Self> {
        let sc = Scenario::from_config(load_scenario(scenario)?).map_err(err)?;
        let net = DnfNetwork::new(
            sc.filter.clone(),
            sc.sensors.clone(),
            sc.weights.clone(),
            &sc.prior_mean,
            &sc.prior_cov,
            seed,
        )
        .map_err(err)?;
        Ok(Self { scenario: sc, net })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.net.node_count()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.scenario.horizon()
    }

    /// Simulated truth: `(states, measurements)` with `measurements[k][node]`.
    fn simulate(&self, seed: u64) -> PyResult<(Rows, Vec<Rows>)> {
        let t = simulate_truth(&self.scenario, seed).map_err(err)?;
        Ok((
            t.states.iter().map(vector).collect(),
            t.measurements.iter().map(|ys| ys.iter().map(vector).collect()).collect(),
        ))
    }

    /// One filtering step; returns a dict per node.
    fn step<'py>(&mut self, py: Python<'py>, measurements: Vec<Vec<f64>>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let ys: Vec<DVector<f64>> = measurements.into_iter().map(DVector::from_vec).collect();
        let report = self.net.step(&self.scenario.motion, &ys).map_err(err)?;
        report
            .nodes
            .iter()
            .map(|nd| {
                let d = PyDict::new(py);
                d.set_item("estimate", vector(&nd.estimate))?;
                d.set_item("covariance", rows(&nd.covariance))?;
                d.set_item("nu", vector(&nd.nu))?;
                d.set_item("nu_tilde", vector(&nd.nu_tilde))?;
                d.set_item("consensus_rounds", nd.consensus_rounds)?;
                d.set_item("bytes_gamma_xi", nd.bytes_gamma_xi)?;
                Ok(d)
            })
            .collect()
    }
}

#[pymodule]
fn kmefilter(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(kernel_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(centered_weight, m)?)?;
    m.add_function(wrap_pyfunction!(metropolis_weights, m)?)?;
    m.add_function(wrap_pyfunction!(average_consensus, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_weights, m)?)?;
    m.add_function(wrap_pyfunction!(kalman_step, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<Network>()?;
    Ok(())
}

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cnf::CentralizedFilter;
use crate::consensus::{ConsensusLedger, StopRule};
use crate::dnf::{initial_sample, predict, state_estimate, DnfNetwork, SharedStream};
use crate::embedding::WeightedSample;
use crate::error::{Error, Result};
use crate::harness::metrics::{compute_metrics, MetricsTable};
use crate::kernels::KernelSpec;
use crate::scenarios::{simulate_truth, MotionModel, Scenario, Truth};

pub const AVERAGING: &str = "per step k: RMSE_k = sqrt(mean |e|^2) and AEE_k = mean |e| over runs \
(over every run and node for dnf); reported values are means of RMSE_k and AEE_k over k = 1..horizon";

#[derive(Clone, Copy, Debug, Default)]
pub struct ExperimentOptions {
    pub with_centralized: bool,
    pub with_baseline: bool,
}

/// Truth and filter seeds for run `run`, derived from the master seed.
pub fn run_seeds(master: u64, run: usize) -> (u64, u64) {
    let draw = |purpose: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(master);
        rng.set_stream(run as u64 * 2 + purpose);
        rng.next_u64()
    };
    (draw(0), draw(1))
}

/// Particles propagated through the motion model with no measurement update.
#[derive(Clone, Debug)]
pub struct PredictionOnly {
    sample: WeightedSample,
    stream: SharedStream,
}

impl PredictionOnly {
    pub fn new(prior_mean: &DVector<f64>, prior_cov: &nalgebra::DMatrix<f64>, m: usize, seed: u64) -> Result<Self> {
        let mut stream = SharedStream::new(seed);
        let sample = initial_sample(prior_mean, prior_cov, m, &mut stream)?;
        Ok(Self { sample, stream })
    }

    pub fn step(&mut self, motion: &MotionModel) -> Result<DVector<f64>> {
        self.sample = predict(&self.sample, motion, &mut self.stream)?;
        Ok(state_estimate(self.sample.points(), self.sample.weights()).0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub node: String,
    pub x_hat: Vec<f64>,
    pub trace_p: f64,
    pub sum_nu: f64,
    pub qp_iters: usize,
    pub consensus_rounds: usize,
    pub bytes_gamma_xi: u64,
    pub bytes_raw: u64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub run: usize,
    /// True states for steps `1..=horizon`.
    pub truth: Vec<DVector<f64>>,
    /// `dnf[i][k - 1]` is node `i`'s estimate at step `k`; `None` if the run diverged.
    pub dnf: Option<Vec<Vec<DVector<f64>>>>,
    pub cnf: Option<Vec<DVector<f64>>>,
    pub baseline: Option<Vec<DVector<f64>>>,
    pub failures: BTreeMap<&'static str, String>,
    pub trace: Vec<TraceRow>,
    pub rounds: Vec<usize>,
    pub bytes_gamma_xi: u64,
    pub bytes_raw: u64,
    pub max_point_drift: f64,
    pub max_dnf_cnf_gap: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CommSummary {
    pub rounds_mean: f64,
    /// Mean over completed runs of the bytes sent by all nodes over the horizon.
    pub bytes_gamma_xi: f64,
    pub bytes_raw: f64,
    pub message_bytes_gamma_xi: u64,
    pub message_bytes_raw: Vec<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub runs: usize,
    pub horizon: usize,
    pub nodes: usize,
    pub samples: usize,
    pub kernel: KernelSpec,
    pub consensus: StopRule,
    pub averaging: &'static str,
    pub methods: BTreeMap<String, MetricsTable>,
    pub comm: CommSummary,
    /// Distributed-filter runs that diverged.
    pub divergences: usize,
    pub divergences_by_method: BTreeMap<String, usize>,
    pub max_point_drift: f64,
    pub max_dnf_cnf_gap: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub summary: Summary,
    pub runs: Vec<RunOutput>,
}

fn finite(x: &DVector<f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("estimate is not finite".into()))
    }
}

fn run_dnf(scenario: &Scenario, truth: &Truth, seed: u64, out: &mut RunOutput) -> Result<Vec<Vec<DVector<f64>>>> {
    let mut net = DnfNetwork::new(
        scenario.filter.clone(),
        scenario.sensors.clone(),
        scenario.weights.clone(),
        &scenario.prior_mean,
        &scenario.prior_cov,
        seed,
    )?;
    let n = net.node_count();
    let mut est = vec![Vec::with_capacity(scenario.horizon()); n];
    for (k, ys) in truth.measurements.iter().enumerate() {
        let report = net.step(&scenario.motion, ys)?;
        out.rounds.push(report.ledger.rounds);
        out.bytes_gamma_xi += report.ledger.bytes_gamma_xi;
        out.bytes_raw += report.ledger.bytes_raw;
        out.max_point_drift = out.max_point_drift.max(report.point_drift);
        for (i, nd) in report.nodes.into_iter().enumerate() {
            finite(&nd.estimate)?;
            out.trace.push(TraceRow {
                k: k + 1,
                node: i.to_string(),
                x_hat: nd.estimate.iter().copied().collect(),
                trace_p: nd.covariance.trace(),
                sum_nu: nd.nu.sum(),
                qp_iters: nd.qp_iterations,
                consensus_rounds: nd.consensus_rounds,
                bytes_gamma_xi: nd.bytes_gamma_xi,
                bytes_raw: nd.bytes_raw,
            });
            est[i].push(nd.estimate);
        }
    }
    Ok(est)
}

fn run_cnf(scenario: &Scenario, truth: &Truth, seed: u64, out: &mut RunOutput) -> Result<Vec<DVector<f64>>> {
    let mut filter = CentralizedFilter::new(
        scenario.filter.clone(),
        scenario.sensors.clone(),
        &scenario.prior_mean,
        &scenario.prior_cov,
        seed,
    )?;
    let mut est = Vec::with_capacity(scenario.horizon());
    for (k, ys) in truth.measurements.iter().enumerate() {
        let r = filter.step(&scenario.motion, ys)?;
        finite(&r.estimate)?;
        out.trace.push(TraceRow {
            k: k + 1,
            node: "cnf".into(),
            x_hat: r.estimate.iter().copied().collect(),
            trace_p: r.covariance.trace(),
            sum_nu: r.nu.sum(),
            qp_iters: r.qp_iterations,
            consensus_rounds: 0,
            bytes_gamma_xi: 0,
            bytes_raw: 0,
        });
        est.push(r.estimate);
    }
    Ok(est)
}

fn run_baseline(scenario: &Scenario, truth: &Truth, seed: u64, out: &mut RunOutput) -> Result<Vec<DVector<f64>>> {
    let mut filter = PredictionOnly::new(&scenario.prior_mean, &scenario.prior_cov, scenario.filter.samples, seed)?;
    let mut est = Vec::with_capacity(scenario.horizon());
    for k in 0..truth.measurements.len() {
        let x = filter.step(&scenario.motion)?;
        finite(&x)?;
        out.trace.push(TraceRow {
            k: k + 1,
            node: "baseline".into(),
            x_hat: x.iter().copied().collect(),
            trace_p: f64::NAN,
            sum_nu: 1.0,
            qp_iters: 0,
            consensus_rounds: 0,
            bytes_gamma_xi: 0,
            bytes_raw: 0,
        });
        est.push(x);
    }
    Ok(est)
}

/// Simulates one Monte Carlo run and every requested filter on it. Filter failures and
/// non-finite estimates mark that filter's run as diverged rather than aborting.
pub fn run_single(scenario: &Scenario, run: usize, opts: ExperimentOptions) -> Result<RunOutput> {
    let (truth_seed, filter_seed) = run_seeds(scenario.seed(), run);
    let truth = simulate_truth(scenario, truth_seed)?;
    let mut out = RunOutput {
        run,
        truth: truth.states[1..].to_vec(),
        dnf: None,
        cnf: None,
        baseline: None,
        failures: BTreeMap::new(),
        trace: Vec::new(),
        rounds: Vec::new(),
        bytes_gamma_xi: 0,
        bytes_raw: 0,
        max_point_drift: 0.0,
        max_dnf_cnf_gap: None,
    };
    match run_dnf(scenario, &truth, filter_seed, &mut out) {
        Ok(est) => out.dnf = Some(est),
        Err(e) => {
            out.failures.insert("dnf", e.to_string());
        }
    }
    if opts.with_centralized {
        match run_cnf(scenario, &truth, filter_seed, &mut out) {
            Ok(est) => out.cnf = Some(est),
            Err(e) => {
                out.failures.insert("cnf", e.to_string());
            }
        }
    }
    if opts.with_baseline {
        match run_baseline(scenario, &truth, filter_seed, &mut out) {
            Ok(est) => out.baseline = Some(est),
            Err(e) => {
                out.failures.insert("baseline", e.to_string());
            }
        }
    }
    if let (Some(d), Some(c)) = (&out.dnf, &out.cnf) {
        let gap = d
            .iter()
            .flat_map(|node| node.iter().zip(c).map(|(a, b)| (a - b).amax()))
            .fold(0.0, f64::max);
        out.max_dnf_cnf_gap = Some(gap);
    }
    Ok(out)
}

fn method_metrics(runs: &[RunOutput], pick: impl Fn(&RunOutput) -> Vec<&Vec<DVector<f64>>>) -> Result<Option<MetricsTable>> {
    let mut truth = Vec::new();
    let mut est = Vec::new();
    for r in runs {
        for e in pick(r) {
            truth.push(r.truth.clone());
            est.push(e.clone());
        }
    }
    if est.is_empty() {
        return Ok(None);
    }
    compute_metrics(&truth, &est).map(Some)
}

/// Runs every Monte Carlo replication (in parallel) and aggregates in run order.
pub fn run_experiment(scenario: &Scenario, opts: ExperimentOptions) -> Result<Experiment> {
    let runs = (0..scenario.runs())
        .into_par_iter()
        .map(|r| run_single(scenario, r, opts))
        .collect::<Result<Vec<_>>>()?;

    let mut methods = BTreeMap::new();
    if let Some(t) = method_metrics(&runs, |r| r.dnf.iter().flatten().collect())? {
        methods.insert("dnf".to_string(), t);
    }
    if opts.with_centralized {
        if let Some(t) = method_metrics(&runs, |r| r.cnf.iter().collect())? {
            methods.insert("cnf".to_string(), t);
        }
    }
    if opts.with_baseline {
        if let Some(t) = method_metrics(&runs, |r| r.baseline.iter().collect())? {
            methods.insert("baseline".to_string(), t);
        }
    }

    let mut divergences_by_method = BTreeMap::new();
    let mut names = vec!["dnf"];
    if opts.with_centralized {
        names.push("cnf");
    }
    if opts.with_baseline {
        names.push("baseline");
    }
    for name in names {
        let count = runs.iter().filter(|r| r.failures.contains_key(name)).count();
        divergences_by_method.insert(name.to_string(), count);
    }

    let completed: Vec<&RunOutput> = runs.iter().filter(|r| r.dnf.is_some()).collect();
    let denom = completed.len().max(1) as f64;
    let all_rounds: Vec<usize> = completed.iter().flat_map(|r| r.rounds.iter().copied()).collect();
    let m = scenario.filter.samples;
    let comm = CommSummary {
        rounds_mean: all_rounds.iter().sum::<usize>() as f64 / all_rounds.len().max(1) as f64,
        bytes_gamma_xi: completed.iter().map(|r| r.bytes_gamma_xi as f64).sum::<f64>() / denom,
        bytes_raw: completed.iter().map(|r| r.bytes_raw as f64).sum::<f64>() / denom,
        message_bytes_gamma_xi: ConsensusLedger::gamma_xi_message_bytes(m),
        message_bytes_raw: scenario
            .sensors
            .iter()
            .map(|s| ConsensusLedger::raw_message_bytes(m, s.measurement_dim()))
            .collect(),
    };
    let max_dnf_cnf_gap = runs
        .iter()
        .filter_map(|r| r.max_dnf_cnf_gap)
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.max(g))));
    let kernel = match scenario.filter.embedding {
        crate::dnf::Embedding::Kernel(k) => k,
        crate::dnf::Embedding::Identity => KernelSpec::polynomial(0.0, 1),
    };
    let summary = Summary {
        scenario: scenario.config.name.clone(),
        seed: scenario.seed(),
        runs: scenario.runs(),
        horizon: scenario.horizon(),
        nodes: scenario.node_count(),
        samples: m,
        kernel,
        consensus: scenario.filter.consensus,
        averaging: AVERAGING,
        methods,
        comm,
        divergences: divergences_by_method["dnf"],
        divergences_by_method,
        max_point_drift: runs.iter().map(|r| r.max_point_drift).fold(0.0, f64::max),
        max_dnf_cnf_gap,
    };
    Ok(Experiment { summary, runs })
}

#[derive(Serialize)]
struct Placements<'a> {
    scenario: &'a str,
    sensors: Vec<[f64; 2]>,
    edges: Vec<[usize; 2]>,
    consensus_weights: Vec<Vec<f64>>,
    second_largest_eigenvalue: f64,
}

/// Writes `summary.json`, `placements.json`, and one `traces/run_NNNN.csv` per run.
pub fn write_outputs(dir: &Path, scenario: &Scenario, exp: &Experiment) -> Result<()> {
    fs::create_dir_all(dir.join("traces"))?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&exp.summary)? + "\n")?;

    let a = scenario.weights.matrix();
    let placements = Placements {
        scenario: &scenario.config.name,
        sensors: scenario.sensors.iter().map(|s| s.position()).collect(),
        edges: scenario.graph.edges().map(|(i, j)| [i, j]).collect(),
        consensus_weights: (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect(),
        second_largest_eigenvalue: scenario.weights.second_largest_modulus(),
    };
    fs::write(dir.join("placements.json"), serde_json::to_string_pretty(&placements)? + "\n")?;

    let n_x = scenario.prior_mean.len();
    for run in &exp.runs {
        let mut w = csv::Writer::from_path(dir.join("traces").join(format!("run_{:04}.csv", run.run)))?;
        let mut header = vec!["k".to_string(), "node".to_string()];
        header.extend((0..n_x).map(|i| format!("x_hat_{i}")));
        header.extend(
            ["trace_P", "sum_nu", "qp_iters", "consensus_rounds", "bytes_gamma_xi", "bytes_raw"].map(String::from),
        );
        w.write_record(&header)?;
        for row in &run.trace {
            let mut rec = vec![row.k.to_string(), row.node.clone()];
            rec.extend(row.x_hat.iter().map(|v| v.to_string()));
            rec.push(row.trace_p.to_string());
            rec.push(row.sum_nu.to_string());
            rec.push(row.qp_iters.to_string());
            rec.push(row.consensus_rounds.to_string());
            rec.push(row.bytes_gamma_xi.to_string());
            rec.push(row.bytes_raw.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_run_and_purpose() {
        let (a, b) = run_seeds(7, 0);
        let (c, d) = run_seeds(7, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, d);
        assert_eq!(run_seeds(7, 1), (c, d));
    }
}

//! JSON scenario files.
//!
//! ```json
//! {
//!   "name": "a2",
//!   "motion":  {"kind": "cv", "dt": 0.08, "accel_var": 100.0},
//!   "sensors": {"kind": "range_bearing", "count": 6, "square": 3000.0,
//!               "noise_var": [100.0, 0.01], "placement_seed": 11},
//!   "graph":   {"kind": "random_geometric", "radius": 2000.0},
//!   "init":    {"mean": [0.0, -18.0, 500.0, 12.0], "cov_diag": [100.0, 10.0, 100.0, 10.0]},
//!   "filter":  {"samples": 50, "kernel": {"kind": "laplace", "sigma": 2.0}},
//!   "runs":    {"count": 100, "horizon": 100, "seed": 7}
//! }
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consensus::{metropolis_weights, ConsensusGraph, ConsensusWeights, StopRule};
use crate::dnf::{Embedding, FilterConfig, ResamplingPolicy};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::scenarios::models::{MotionModel, SensorKind, SensorModel, DEFAULT_TURN_RATE_DENSITY};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub motion: MotionSpec,
    pub sensors: SensorSpec,
    pub graph: GraphSpec,
    pub init: InitSpec,
    pub filter: FilterSpec,
    pub runs: RunSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotionSpec {
    Cv {
        dt: f64,
        accel_var: f64,
    },
    Ct {
        dt: f64,
        q: f64,
        #[serde(default = "default_turn_density")]
        turn_rate_density: f64,
    },
}

fn default_turn_density() -> f64 {
    DEFAULT_TURN_RATE_DENSITY
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKindSpec {
    BearingOnly,
    RangeBearing,
    RangeBearingRate,
}

impl From<SensorKindSpec> for SensorKind {
    fn from(k: SensorKindSpec) -> Self {
        match k {
            SensorKindSpec::BearingOnly => SensorKind::BearingOnly,
            SensorKindSpec::RangeBearing => SensorKind::RangeBearing,
            SensorKindSpec::RangeBearingRate => SensorKind::RangeBearingRate,
        }
    }
}

/// Identical sensors placed uniformly in a square of side `square` centred at the origin,
/// unless `positions` lists them explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub kind: SensorKindSpec,
    pub count: usize,
    pub noise_var: Vec<f64>,
    #[serde(default)]
    pub square: Option<f64>,
    #[serde(default)]
    pub placement_seed: Option<u64>,
    #[serde(default)]
    pub positions: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Ring,
    Complete,
    EdgeList {
        n: usize,
        edges: Vec<[usize; 2]>,
    },
    /// Connects nodes within `radius`. Node positions are the sensor positions unless
    /// both `d` and `seed` are given, in which case they are drawn in a `d`-square.
    RandomGeometric {
        radius: f64,
        #[serde(default)]
        d: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub mean: Vec<f64>,
    #[serde(default)]
    pub cov_diag: Option<Vec<f64>>,
    #[serde(default)]
    pub cov: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub samples: usize,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub sigma_reg: Option<f64>,
    #[serde(default)]
    pub consensus: StopRule,
    #[serde(default)]
    pub resampling: ResamplingPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub count: usize,
    pub horizon: usize,
    pub seed: u64,
}

/// Command-line style overrides applied on top of a scenario file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub runs: Option<usize>,
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub kernel: Option<String>,
    pub sigma: Option<f64>,
    pub samples: Option<usize>,
    pub consensus_rounds: Option<usize>,
    pub consensus_tol: Option<f64>,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(r) = o.runs {
            self.runs.count = r;
        }
        if let Some(h) = o.horizon {
            self.runs.horizon = h;
        }
        if let Some(s) = o.seed {
            self.runs.seed = s;
        }
        if let Some(k) = &o.kernel {
            let sigma = match self.filter.kernel {
                KernelSpec::Gaussian { sigma } | KernelSpec::Laplace { sigma } => sigma,
                KernelSpec::Polynomial { .. } => 1.0,
            };
            self.filter.kernel = match k.to_ascii_lowercase().as_str() {
                "gaussian" => KernelSpec::Gaussian { sigma },
                "laplace" => KernelSpec::Laplace { sigma },
                "polynomial" => match self.filter.kernel {
                    p @ KernelSpec::Polynomial { .. } => p,
                    _ => KernelSpec::Polynomial { c: 1.0, d: 2 },
                },
                other => return Err(Error::Config(format!("--kernel: unknown kernel `{other}`"))),
            };
        }
        if let Some(s) = o.sigma {
            self.filter.kernel = self.filter.kernel.with_sigma(s);
        }
        if let Some(m) = o.samples {
            self.filter.samples = m;
        }
        match (o.consensus_rounds, o.consensus_tol) {
            (Some(r), None) => self.filter.consensus = StopRule { max_rounds: r, tol: 0.0 },
            (None, Some(t)) => self.filter.consensus.tol = t,
            (Some(r), Some(t)) => self.filter.consensus = StopRule { max_rounds: r, tol: t },
            (None, None) => {}
        }
        self.validate()
    }

    /// Field-level checks beyond what the JSON schema enforces.
    pub fn validate(&self) -> Result<()> {
        let field = |f: &str, msg: String| Err(Error::Config(format!("{f}: {msg}")));
        let n_x = match self.motion {
            MotionSpec::Cv { dt, accel_var } => {
                if !(dt > 0.0) {
                    return field("motion.dt", format!("must be positive, got {dt}"));
                }
                if !(accel_var >= 0.0) {
                    return field("motion.accel_var", format!("must be nonnegative, got {accel_var}"));
                }
                4
            }
            MotionSpec::Ct { dt, q, turn_rate_density } => {
                if !(dt > 0.0) {
                    return field("motion.dt", format!("must be positive, got {dt}"));
                }
                if !(q >= 0.0) || !(turn_rate_density >= 0.0) {
                    return field("motion.q", "noise intensities must be nonnegative".into());
                }
                5
            }
        };
        let s = &self.sensors;
        if s.count == 0 {
            return field("sensors.count", "need at least one sensor".into());
        }
        let n_y = SensorKind::from(s.kind).measurement_dim();
        if s.noise_var.len() != n_y {
            return field("sensors.noise_var", format!("expected {n_y} entries for {:?}, got {}", s.kind, s.noise_var.len()));
        }
        if s.noise_var.iter().any(|v| !(*v > 0.0)) {
            return field("sensors.noise_var", "variances must be positive".into());
        }
        match (&s.positions, s.square) {
            (Some(p), _) if p.len() != s.count => {
                return field("sensors.positions", format!("expected {} positions, got {}", s.count, p.len()));
            }
            (None, None) => return field("sensors.square", "required when positions are not listed".into()),
            (None, Some(d)) if !(d > 0.0) => return field("sensors.square", format!("must be positive, got {d}")),
            _ => {}
        }
        if let GraphSpec::EdgeList { n, .. } = self.graph {
            if n != s.count {
                return field("graph.n", format!("must equal sensors.count = {}, got {n}", s.count));
            }
        }
        if self.init.mean.len() != n_x {
            return field("init.mean", format!("expected {n_x} entries, got {}", self.init.mean.len()));
        }
        match (&self.init.cov_diag, &self.init.cov) {
            (Some(d), None) => {
                if d.len() != n_x {
                    return field("init.cov_diag", format!("expected {n_x} entries, got {}", d.len()));
                }
                if d.iter().any(|v| !(*v >= 0.0)) {
                    return field("init.cov_diag", "variances must be nonnegative".into());
                }
            }
            (None, Some(c)) => {
                if c.len() != n_x || c.iter().any(|r| r.len() != n_x) {
                    return field("init.cov", format!("expected a {n_x}x{n_x} matrix"));
                }
            }
            _ => return field("init", "exactly one of cov_diag or cov is required".into()),
        }
        let f = &self.filter;
        if f.samples < 2 {
            return field("filter.samples", format!("need at least 2, got {}", f.samples));
        }
        f.kernel.validate().map_err(|e| Error::Config(format!("filter.kernel: {e}")))?;
        if let Some(eps) = f.epsilon {
            if !(eps >= 0.0) || eps * f.samples as f64 >= 1.0 {
                return field("filter.epsilon", format!("need 0 <= epsilon < 1/samples, got {eps}"));
            }
        }
        if let Some(r) = f.sigma_reg {
            if !(r >= 0.0) {
                return field("filter.sigma_reg", format!("must be nonnegative, got {r}"));
            }
        }
        f.consensus.validate().map_err(|e| Error::Config(format!("filter.consensus: {e}")))?;
        f.resampling.validate().map_err(|e| Error::Config(format!("filter.resampling: {e}")))?;
        if self.runs.count == 0 {
            return field("runs.count", "need at least one run".into());
        }
        if self.runs.horizon == 0 {
            return field("runs.horizon", "need at least one step".into());
        }
        Ok(())
    }
}

/// A scenario with all models instantiated.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub motion: MotionModel,
    pub sensors: Vec<SensorModel>,
    pub graph: ConsensusGraph,
    pub weights: ConsensusWeights,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
    pub filter: FilterConfig,
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let motion = match config.motion {
            MotionSpec::Cv { dt, accel_var } => MotionModel::constant_velocity(dt, accel_var)?,
            MotionSpec::Ct { dt, q, turn_rate_density } => MotionModel::coordinated_turn(dt, q, turn_rate_density)?,
        };
        let positions = sensor_positions(&config);
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(&config.sensors.noise_var));
        let sensors = positions
            .iter()
            .map(|&p| SensorModel::new(config.sensors.kind.into(), p, r.clone()))
            .collect::<Result<Vec<_>>>()?;
        let n = sensors.len();
        let graph = match &config.graph {
            GraphSpec::Ring => ConsensusGraph::ring(n)?,
            GraphSpec::Complete => ConsensusGraph::complete(n)?,
            GraphSpec::EdgeList { n, edges } => ConsensusGraph::new(*n, edges.iter().map(|e| (e[0], e[1])))?,
            GraphSpec::RandomGeometric { radius, d, seed } => match (d, seed) {
                (Some(d), Some(seed)) => ConsensusGraph::random_geometric(n, *d, *radius, *seed)?,
                _ => ConsensusGraph::from_positions(&positions, *radius)?,
            },
        };
        let weights = metropolis_weights(&graph)?;
        let prior_mean = DVector::from_column_slice(&config.init.mean);
        let prior_cov = match (&config.init.cov_diag, &config.init.cov) {
            (Some(d), _) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            (None, Some(c)) => DMatrix::from_fn(c.len(), c.len(), |i, j| c[i][j]),
            (None, None) => unreachable!("validated"),
        };
        let f = &config.filter;
        let filter = FilterConfig {
            samples: f.samples,
            epsilon: f.epsilon,
            sigma_reg: f.sigma_reg,
            embedding: Embedding::Kernel(f.kernel),
            consensus: f.consensus,
            resampling: f.resampling,
        };
        filter.validate()?;
        Ok(Self {
            config,
            motion,
            sensors,
            graph,
            weights,
            prior_mean,
            prior_cov,
            filter,
        })
    }

    pub fn node_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn horizon(&self) -> usize {
        self.config.runs.horizon
    }

    pub fn runs(&self) -> usize {
        self.config.runs.count
    }

    pub fn seed(&self) -> u64 {
        self.config.runs.seed
    }
}

fn sensor_positions(cfg: &ScenarioConfig) -> Vec<[f64; 2]> {
    let s = &cfg.sensors;
    if let Some(p) = &s.positions {
        return p.clone();
    }
    let half = s.square.expect("validated") / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(s.placement_seed.unwrap_or(cfg.runs.seed));
    (0..s.count)
        .map(|_| [rng.random_range(-half..=half), rng.random_range(-half..=half)])
        .collect()
}

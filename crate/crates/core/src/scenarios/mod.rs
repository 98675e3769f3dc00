//! Motion and sensor models, scenario files and ground-truth simulation.

mod config;
mod models;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use config::{
    FilterSpec, GraphSpec, InitSpec, MotionSpec, Overrides, RunSpec, Scenario, ScenarioConfig, SensorKindSpec,
    SensorSpec,
};
pub use models::{
    ct_transition, cv_transition, wrap_angle, MotionKind, MotionModel, SensorKind, SensorModel,
    DEFAULT_TURN_RATE_DENSITY, TURN_RATE_GUARD,
};

use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;

/// Bundled scenario files: `a1` (bearing-only, constant velocity), `a2` (range and bearing,
/// constant velocity) and `b` (range, bearing and range rate, coordinated turn).
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "a1" => Some(include_str!("../../scenarios/a1.json")),
        "a2" => Some(include_str!("../../scenarios/a2.json")),
        "b" => Some(include_str!("../../scenarios/b.json")),
        _ => None,
    }
}

pub fn load_bundled(name: &str) -> Result<ScenarioConfig> {
    let text = bundled(name).ok_or_else(|| Error::Config(format!("no bundled scenario named `{name}`")))?;
    ScenarioConfig::from_json(text)
}

/// Ground truth for one run: `states[0]` is the initial state, `states[k]` and
/// `measurements[k - 1][i]` belong to time step `k`.
#[derive(Clone, Debug)]
pub struct Truth {
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<Vec<DVector<f64>>>,
}

/// Draws `x0 ~ N(mean, P0)`, propagates it through the motion model and measures every
/// step with every sensor. Deterministic in `seed`.
pub fn simulate_truth(scenario: &Scenario, seed: u64) -> Result<Truth> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = psd_sqrt(&scenario.prior_cov);
    let z = DVector::from_fn(scenario.prior_mean.len(), |_, _| rng.sample(StandardNormal));
    let mut x = &scenario.prior_mean + root * z;
    let mut states = vec![x.clone()];
    let mut measurements = Vec::with_capacity(scenario.horizon());
    for _ in 0..scenario.horizon() {
        let noise = scenario.motion.sample_noise(&mut rng);
        x = scenario.motion.propagate(&x, &noise)?;
        let ys = scenario
            .sensors
            .iter()
            .map(|s| {
                let v = s.sample_noise(&mut rng);
                s.measure(&x, &v)
            })
            .collect::<Result<Vec<_>>>()?;
        states.push(x.clone());
        measurements.push(ys);
    }
    Ok(Truth { states, measurements })
}

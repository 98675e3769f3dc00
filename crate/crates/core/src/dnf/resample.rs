use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::WeightedSample;
use crate::error::{Error, Result};

/// A random stream every node holds an identical copy of. Nodes that consume it in the same
/// order draw the same numbers, which keeps their sample points in lockstep.
#[derive(Clone, Debug)]
pub struct SharedStream {
    rng: ChaCha8Rng,
}

impl SharedStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.rng.sample(StandardNormal))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ResamplingPolicy {
    #[default]
    EveryStep,
    /// Resample when the effective sample size `1 / sum(w^2)` drops below `fraction * m`.
    Ess { fraction: f64 },
    Never,
}

impl ResamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        if let ResamplingPolicy::Ess { fraction } = self {
            if !(*fraction > 0.0 && *fraction <= 1.0) {
                return Err(Error::Config(format!(
                    "filter.resampling.ess.fraction: must lie in (0, 1], got {fraction}"
                )));
            }
        }
        Ok(())
    }

    pub fn should_resample(&self, weights: &DVector<f64>) -> bool {
        match self {
            ResamplingPolicy::EveryStep => true,
            ResamplingPolicy::Never => false,
            ResamplingPolicy::Ess { fraction } => effective_sample_size(weights) < fraction * weights.len() as f64,
        }
    }
}

pub fn effective_sample_size(weights: &DVector<f64>) -> f64 {
    1.0 / weights.norm_squared()
}

/// Multinomial resampling by inverse CDF. Consumes exactly `m` uniforms from the stream.
pub fn resample(points: &DMatrix<f64>, weights: &DVector<f64>, stream: &mut SharedStream) -> Result<WeightedSample> {
    let uniforms: Vec<f64> = (0..weights.len()).map(|_| stream.uniform()).collect();
    resample_with(points, weights, &uniforms)
}

/// Inverse-CDF resampling with one uniform in `[0, 1)` per output point.
pub fn resample_with(points: &DMatrix<f64>, weights: &DVector<f64>, uniforms: &[f64]) -> Result<WeightedSample> {
    let m = weights.len();
    if points.ncols() != m {
        return Err(Error::Dimension {
            context: "resampling weights",
            expected: points.ncols(),
            got: m,
        });
    }
    let mut cdf = Vec::with_capacity(m);
    let mut acc = 0.0;
    for &w in weights.iter() {
        acc += w.max(0.0);
        cdf.push(acc);
    }
    if !(acc > 0.0 && acc.is_finite()) {
        return Err(Error::Numerical("resampling weights have no positive mass".into()));
    }
    let mut out = DMatrix::zeros(points.nrows(), uniforms.len());
    for (l, &u) in uniforms.iter().enumerate() {
        let idx = cdf.partition_point(|&c| c <= u * acc).min(m - 1);
        out.set_column(l, &points.column(idx));
    }
    WeightedSample::uniform(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_weights_copy_one_point() {
        let pts = DMatrix::from_fn(2, 5, |r, c| (r * 10 + c) as f64);
        let mut w = DVector::zeros(5);
        w[2] = 1.0;
        let out = resample(&pts, &w, &mut SharedStream::new(1)).unwrap();
        for l in 0..5 {
            assert_eq!(out.points().column(l), pts.column(2));
        }
        assert!(out.weights().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn uniform_weights_pass_chi_square() {
        // 10 categories, 10^4 draws; 21.666 is the 0.99 quantile of chi-square with 9 dof.
        let m = 10;
        let pts = DMatrix::from_fn(1, m, |_, c| c as f64);
        let w = DVector::from_element(m, 0.1);
        let mut stream = SharedStream::new(2024);
        let mut counts = [0usize; 10];
        for _ in 0..1000 {
            let out = resample(&pts, &w, &mut stream).unwrap();
            for &v in out.points().iter() {
                counts[v as usize] += 1;
            }
        }
        let expected = 1000.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(stat < 21.666, "chi-square {stat}");
    }

    #[test]
    fn shared_stream_gives_identical_outputs() {
        let pts = DMatrix::from_fn(3, 8, |r, c| (r as f64).sin() + c as f64);
        let w = DVector::from_fn(8, |i, _| (i + 1) as f64 / 36.0);
        let a = resample(&pts, &w, &mut SharedStream::new(9)).unwrap();
        let b = resample(&pts, &w, &mut SharedStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ess_policy() {
        let flat = DVector::from_element(10, 0.1);
        let mut peaked = DVector::from_element(10, 0.01);
        peaked[0] = 0.91;
        let policy = ResamplingPolicy::Ess { fraction: 0.5 };
        assert!(!policy.should_resample(&flat));
        assert!(policy.should_resample(&peaked));
        assert!((effective_sample_size(&flat) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn policy_json() {
        let p: ResamplingPolicy = serde_json::from_str(r#"{"ess":{"fraction":0.5}}"#).unwrap();
        assert_eq!(p, ResamplingPolicy::Ess { fraction: 0.5 });
        let p: ResamplingPolicy = serde_json::from_str(r#""every_step""#).unwrap();
        assert_eq!(p, ResamplingPolicy::EveryStep);
    }
}

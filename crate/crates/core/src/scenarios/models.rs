use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{block_diagonal, cholesky_spd, psd_sqrt};

/// Below this turn rate the coordinated-turn matrix uses its small-angle limit.
pub const TURN_RATE_GUARD: f64 = 1e-8;

/// Turn-rate random-walk density of the coordinated-turn process noise.
pub const DEFAULT_TURN_RATE_DENSITY: f64 = 1.75e-3;

#[derive(Clone, Debug, PartialEq)]
pub enum MotionKind {
    /// Nearly constant velocity, state `[x, vx, y, vy]`.
    ConstantVelocity,
    /// Coordinated turn, state `[x, vx, y, vy, omega]`.
    CoordinatedTurn,
    /// `x' = F x + noise`.
    Linear { f: DMatrix<f64> },
}

/// State transition with additive process noise `x' = f(x) + L z`, `z ~ N(0, I)`.
#[derive(Clone, Debug)]
pub struct MotionModel {
    kind: MotionKind,
    dt: f64,
    q: DMatrix<f64>,
    shaping: DMatrix<f64>,
}

fn cv_shaping_block(dt: f64) -> DMatrix<f64> {
    DMatrix::from_column_slice(2, 1, &[dt * dt / 2.0, dt])
}

fn check_state(x: &DVector<f64>, n: usize, context: &'static str) -> Result<()> {
    if x.len() != n {
        return Err(Error::Dimension {
            context,
            expected: n,
            got: x.len(),
        });
    }
    Ok(())
}

impl MotionModel {
    /// Constant velocity with white acceleration of variance `accel_var` per axis,
    /// so `Q = accel_var * G G^T`.
    pub fn constant_velocity(dt: f64, accel_var: f64) -> Result<Self> {
        if !(dt > 0.0) || !(accel_var >= 0.0) {
            return Err(Error::Config(format!("motion: need dt > 0 and accel_var >= 0, got {dt}, {accel_var}")));
        }
        let g = cv_shaping_block(dt);
        let shaping = block_diagonal(&[g.clone(), g]) * accel_var.sqrt();
        let q = &shaping * shaping.transpose();
        Ok(Self {
            kind: MotionKind::ConstantVelocity,
            dt,
            q,
            shaping,
        })
    }

    /// Coordinated turn with noise intensity `q` and turn-rate density `turn_density`.
    pub fn coordinated_turn(dt: f64, q: f64, turn_density: f64) -> Result<Self> {
        if !(dt > 0.0) || !(q >= 0.0) || !(turn_density >= 0.0) {
            return Err(Error::Config(format!("motion: need dt > 0, q >= 0, turn density >= 0, got {dt}, {q}, {turn_density}")));
        }
        let axis = DMatrix::from_row_slice(2, 2, &[dt.powi(3) / 3.0, dt * dt / 2.0, dt * dt / 2.0, dt]);
        let turn = DMatrix::from_element(1, 1, turn_density * dt);
        let qm = block_diagonal(&[axis.clone(), axis, turn]) * q;
        let shaping = psd_sqrt(&qm);
        Ok(Self {
            kind: MotionKind::CoordinatedTurn,
            dt,
            q: qm,
            shaping,
        })
    }

    pub fn linear(f: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        if !f.is_square() || q.shape() != f.shape() {
            return Err(Error::Dimension {
                context: "linear motion model",
                expected: f.nrows(),
                got: q.nrows(),
            });
        }
        if crate::linalg::min_eigenvalue(&q) < -1e-12 * q.amax().max(1.0) {
            return Err(Error::Covariance { name: "Q" });
        }
        let shaping = psd_sqrt(&q);
        Ok(Self {
            kind: MotionKind::Linear { f },
            dt: 1.0,
            q,
            shaping,
        })
    }

    pub fn kind(&self) -> &MotionKind {
        &self.kind
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn process_covariance(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn state_dim(&self) -> usize {
        self.shaping.nrows()
    }

    /// Dimension of the standard-normal driving noise.
    pub fn noise_dim(&self) -> usize {
        self.shaping.ncols()
    }

    /// Noiseless transition `f(x)`.
    pub fn transition(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.kind {
            MotionKind::ConstantVelocity => cv_transition(x, &DVector::zeros(2), self.dt),
            MotionKind::CoordinatedTurn => ct_transition(x, &DVector::zeros(5), self.dt),
            MotionKind::Linear { f } => {
                check_state(x, f.ncols(), "linear motion state")?;
                Ok(f * x)
            }
        }
    }

    /// `f(x) + L z` for a standard-normal draw `z`.
    pub fn propagate(&self, x: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_state(z, self.noise_dim(), "process noise draw")?;
        Ok(self.transition(x)? + &self.shaping * z)
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.noise_dim(), |_, _| rng.sample(StandardNormal))
    }
}

/// Constant-velocity step for state `[x, vx, y, vy]`; `noise` is the per-axis acceleration
/// entering through `G = [dt^2/2, dt]^T`.
pub fn cv_transition(x: &DVector<f64>, noise: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    check_state(x, 4, "constant-velocity state")?;
    check_state(noise, 2, "constant-velocity noise")?;
    let (g0, g1) = (dt * dt / 2.0, dt);
    Ok(DVector::from_column_slice(&[
        x[0] + dt * x[1] + g0 * noise[0],
        x[1] + g1 * noise[0],
        x[2] + dt * x[3] + g0 * noise[1],
        x[3] + g1 * noise[1],
    ]))
}

/// Coordinated-turn step for state `[x, vx, y, vy, omega]` using the state's own turn rate;
/// `noise` is added to all five components.
pub fn ct_transition(x: &DVector<f64>, noise: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
    check_state(x, 5, "coordinated-turn state")?;
    check_state(noise, 5, "coordinated-turn noise")?;
    let w = x[4];
    let (s, c) = (w * dt).sin_cos();
    let (a, b) = if w.abs() < TURN_RATE_GUARD {
        // leading Taylor terms of sin(w dt) / w and (1 - cos(w dt)) / w
        (dt, w * dt * dt / 2.0)
    } else {
        // (1 - cos(w dt)) / w written without cancellation
        let half = (w * dt / 2.0).sin();
        (s / w, 2.0 * half * half / w)
    };
    Ok(DVector::from_column_slice(&[
        x[0] + a * x[1] - b * x[3] + noise[0],
        c * x[1] - s * x[3] + noise[1],
        x[2] + b * x[1] + a * x[3] + noise[2],
        s * x[1] + c * x[3] + noise[3],
        x[4] + noise[4],
    ]))
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SensorKind {
    BearingOnly,
    RangeBearing,
    RangeBearingRate,
    /// `y = H x + v`.
    Linear { h: DMatrix<f64> },
}

impl SensorKind {
    pub fn measurement_dim(&self) -> usize {
        match self {
            SensorKind::BearingOnly => 1,
            SensorKind::RangeBearing => 2,
            SensorKind::RangeBearingRate => 3,
            SensorKind::Linear { h } => h.nrows(),
        }
    }

    /// Index of the bearing component, if any.
    pub fn bearing_index(&self) -> Option<usize> {
        match self {
            SensorKind::BearingOnly => Some(0),
            SensorKind::RangeBearing | SensorKind::RangeBearingRate => Some(1),
            SensorKind::Linear { .. } => None,
        }
    }
}

/// A sensor at a planar position with Gaussian measurement noise `R`.
#[derive(Clone, Debug)]
pub struct SensorModel {
    kind: SensorKind,
    position: [f64; 2],
    r: DMatrix<f64>,
    r_sqrt: DMatrix<f64>,
}

impl SensorModel {
    pub fn new(kind: SensorKind, position: [f64; 2], r: DMatrix<f64>) -> Result<Self> {
        let n_y = kind.measurement_dim();
        if r.shape() != (n_y, n_y) {
            return Err(Error::Dimension {
                context: "sensor noise covariance",
                expected: n_y,
                got: r.nrows(),
            });
        }
        let chol = cholesky_spd(&r, "R")?;
        Ok(Self {
            kind,
            position,
            r_sqrt: chol.l(),
            r,
        })
    }

    pub fn kind(&self) -> &SensorKind {
        &self.kind
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    pub fn noise_covariance(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn measurement_dim(&self) -> usize {
        self.kind.measurement_dim()
    }

    /// Noiseless measurement `h(x)`; bearings lie in `(-pi, pi]`.
    pub fn h(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if let SensorKind::Linear { h } = &self.kind {
            check_state(x, h.ncols(), "linear sensor state")?;
            return Ok(h * x);
        }
        if x.len() < 4 {
            return Err(Error::Dimension {
                context: "tracking sensor state",
                expected: 4,
                got: x.len(),
            });
        }
        let (dx, dy) = (x[0] - self.position[0], x[2] - self.position[1]);
        let range = dx.hypot(dy);
        if range == 0.0 {
            return Err(Error::Geometry(x[0], x[2]));
        }
        let bearing = wrap_angle(dy.atan2(dx));
        Ok(match self.kind {
            SensorKind::BearingOnly => DVector::from_column_slice(&[bearing]),
            SensorKind::RangeBearing => DVector::from_column_slice(&[range, bearing]),
            SensorKind::RangeBearingRate => {
                let rate = (dx * x[1] + dy * x[3]) / range;
                DVector::from_column_slice(&[range, bearing, rate])
            }
            SensorKind::Linear { .. } => unreachable!(),
        })
    }

    /// `h(x) + noise` with the bearing re-wrapped into `(-pi, pi]`.
    pub fn measure(&self, x: &DVector<f64>, noise: &DVector<f64>) -> Result<DVector<f64>> {
        check_state(noise, self.measurement_dim(), "measurement noise")?;
        let mut y = self.h(x)? + noise;
        if let Some(b) = self.kind.bearing_index() {
            y[b] = wrap_angle(y[b]);
        }
        Ok(y)
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.measurement_dim(), |_, _| rng.sample(StandardNormal));
        &self.r_sqrt * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn cv_examples() {
        assert_eq!(cv_transition(&v(&[0.0, 1.0, 0.0, -1.0]), &v(&[0.0, 0.0]), 1.0).unwrap(), v(&[1.0, 1.0, -1.0, -1.0]));
        assert_eq!(cv_transition(&v(&[0.0; 4]), &v(&[2.0, 2.0]), 1.0).unwrap(), v(&[1.0, 2.0, 1.0, 2.0]));
        assert_eq!(cv_transition(&v(&[0.0, 1.0, 0.0, 1.0]), &v(&[0.0, 0.0]), 1.0).unwrap(), v(&[1.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn cv_noise_covariance_matches_q() {
        let model = MotionModel::constant_velocity(1.0, 100.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let zero = DVector::zeros(4);
        let mut acc = DMatrix::zeros(4, 4);
        let mut mean = DVector::zeros(4);
        let draws: Vec<_> = (0..n)
            .map(|_| model.propagate(&zero, &model.sample_noise(&mut rng)).unwrap())
            .collect();
        for d in &draws {
            mean += d;
        }
        mean /= n as f64;
        for d in &draws {
            let c = d - &mean;
            acc += &c * c.transpose();
        }
        acc /= (n - 1) as f64;
        let g = block_diagonal(&[cv_shaping_block(1.0), cv_shaping_block(1.0)]);
        let q = &g * g.transpose() * 100.0;
        for i in 0..4 {
            for j in 0..4 {
                if q[(i, j)] != 0.0 {
                    assert!((acc[(i, j)] - q[(i, j)]).abs() <= 0.03 * q[(i, j)].abs(), "{i},{j}: {} vs {}", acc[(i, j)], q[(i, j)]);
                } else {
                    assert!(acc[(i, j)].abs() < 0.03 * 25.0);
                }
            }
        }
        assert!((model.process_covariance() - q).amax() < 1e-12);
    }

    #[test]
    fn ct_small_turn_rate_reduces_to_cv() {
        let x = v(&[1.0, 2.0, 3.0, -4.0, 0.0]);
        let ct = ct_transition(&x, &DVector::zeros(5), 0.5).unwrap();
        let cv = cv_transition(&x.rows(0, 4).into_owned(), &DVector::zeros(2), 0.5).unwrap();
        assert_eq!(ct.rows(0, 4).into_owned(), cv);
    }

    #[test]
    fn ct_quarter_turn_rotates_velocity() {
        let dt = 0.2;
        let w = std::f64::consts::FRAC_PI_2 / dt;
        let out = ct_transition(&v(&[0.0, 1.0, 0.0, 0.0, w]), &DVector::zeros(5), dt).unwrap();
        assert!(out[1].abs() < 1e-15);
        assert!((out[3] - 1.0).abs() < 1e-15);
        // position follows the arc: (sin(w dt)/w, (1 - cos(w dt))/w)
        assert!((out[0] - 1.0 / w).abs() < 1e-15);
        assert!((out[2] - 1.0 / w).abs() < 1e-15);
    }

    #[test]
    fn ct_preserves_speed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = DVector::from_fn(5, |i, _| if i == 4 { rng.random_range(-1.0..1.0) } else { rng.random_range(-200.0..200.0) });
            let out = ct_transition(&x, &DVector::zeros(5), 0.2).unwrap();
            assert!((x[1].hypot(x[3]) - out[1].hypot(out[3])).abs() <= 1e-12 * x[1].hypot(x[3]).max(1.0));
        }
    }

    #[test]
    fn ct_is_continuous_across_guard() {
        let base = [5000.0, 180.0, 5000.0, 180.0];
        let limit = ct_transition(&v(&[base[0], base[1], base[2], base[3], 0.0]), &DVector::zeros(5), 0.2).unwrap();
        let tiny = ct_transition(&v(&[base[0], base[1], base[2], base[3], 1e-12]), &DVector::zeros(5), 0.2).unwrap();
        assert!((tiny.rows(0, 4) - limit.rows(0, 4)).amax() <= 1e-8);
        let below = ct_transition(&v(&[base[0], base[1], base[2], base[3], 0.999 * TURN_RATE_GUARD]), &DVector::zeros(5), 0.2).unwrap();
        let above = ct_transition(&v(&[base[0], base[1], base[2], base[3], 1.001 * TURN_RATE_GUARD]), &DVector::zeros(5), 0.2).unwrap();
        // Both sides of the guard differ from the straight line by about w dt^2 |v| / 2.
        assert!((below.rows(0, 4) - above.rows(0, 4)).amax() <= 1e-9);
    }

    #[test]
    fn range_and_bearing_geometry() {
        let s = SensorModel::new(SensorKind::RangeBearing, [0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let y = s.h(&v(&[3.0, 0.0, 4.0, 0.0])).unwrap();
        assert_eq!(y[0], 5.0);
        assert_eq!(y[1], 4.0f64.atan2(3.0));
        let west = s.h(&v(&[-2.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(west[1], PI);
        let west_neg_zero = s.h(&v(&[-2.0, 0.0, -0.0, 0.0])).unwrap();
        assert_eq!(west_neg_zero[1], PI);
    }

    #[test]
    fn radial_motion_gives_speed_as_range_rate() {
        let s = SensorModel::new(SensorKind::RangeBearingRate, [0.0, 0.0], DMatrix::identity(3, 3)).unwrap();
        let speed = 7.5;
        let y = s.h(&v(&[3.0, 3.0 / 5.0 * speed, 4.0, 4.0 / 5.0 * speed])).unwrap();
        assert!((y[2] - speed).abs() < 1e-14);
    }

    #[test]
    fn zero_range_is_a_geometry_error() {
        let s = SensorModel::new(SensorKind::BearingOnly, [1.0, 2.0], DMatrix::identity(1, 1)).unwrap();
        assert!(matches!(s.h(&v(&[1.0, 0.0, 2.0, 0.0])), Err(Error::Geometry(..))));
    }

    #[test]
    fn zero_noise_variance_is_rejected() {
        let err = SensorModel::new(SensorKind::BearingOnly, [0.0, 0.0], DMatrix::zeros(1, 1)).unwrap_err();
        assert!(matches!(err, Error::Covariance { .. }));
    }

    #[test]
    fn noisy_bearings_stay_in_range_and_match_r() {
        let r = DMatrix::from_diagonal(&v(&[100.0, 0.01]));
        let s = SensorModel::new(SensorKind::RangeBearing, [0.0, 0.0], r.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        // Target due west so noise straddles the branch cut.
        let x = v(&[-1000.0, 0.0, 0.0, 0.0]);
        let n = 100_000;
        let mut sum_sq = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let e = s.sample_noise(&mut rng);
            let y = s.measure(&x, &e).unwrap();
            assert!(y[1] > -PI && y[1] <= PI);
            assert!(y[0] > 0.0);
            sum_sq += &e * e.transpose();
        }
        let emp = sum_sq / n as f64;
        for i in 0..2 {
            assert!((emp[(i, i)] - r[(i, i)]).abs() <= 0.03 * r[(i, i)]);
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_angle(0.1) - 0.1).abs() < 1e-16);
    }
}

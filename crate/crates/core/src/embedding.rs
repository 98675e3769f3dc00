//! Weighted-sample representation of distributions and the measurement-operator
//! regression in weight coordinates.
//!
//! Feature maps are never materialized. An embedding `sum_l w_l phi(beta_l)` is carried
//! as its weight vector over the sample points, and every operator acting on it is
//! reduced to products with the Gram matrix `K`, the noiseless measurement sample `Y`
//! and the centered weight matrix `W = diag(w) - w w^T`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::GramContext;
use crate::linalg::{cholesky_spd, psd_sqrt};

const SUM_TOL: f64 = 1e-12;

/// Default weight floor for `m` sample points.
pub fn default_epsilon(m: usize) -> f64 {
    1e-6 / m as f64
}

/// `m` state points (one per column) with a probability weight vector.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSample {
    points: DMatrix<f64>,
    weights: DVector<f64>,
}

impl WeightedSample {
    pub fn new(points: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        let m = points.ncols();
        if m < 2 {
            return Err(Error::InvalidArgument(format!("sample needs at least 2 points, got {m}")));
        }
        if weights.len() != m {
            return Err(Error::Dimension {
                context: "sample weights",
                expected: m,
                got: weights.len(),
            });
        }
        check_probability(&weights, SUM_TOL.max(4.0 * m as f64 * f64::EPSILON))?;
        Ok(Self { points, weights })
    }

    pub fn uniform(points: DMatrix<f64>) -> Result<Self> {
        let m = points.ncols();
        Self::new(points, DVector::from_element(m, 1.0 / m as f64))
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.points.nrows()
    }

    /// Checks the posterior floor `w_l >= eps` (up to rounding).
    pub fn respects_floor(&self, eps: f64) -> bool {
        self.weights.iter().all(|&w| w >= eps - 1e-12)
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DVector<f64>) {
        (self.points, self.weights)
    }
}

fn check_probability(w: &DVector<f64>, tol: f64) -> Result<()> {
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    let s = w.sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::InvalidArgument(format!("weights sum to {s}, expected 1")));
    }
    Ok(())
}

/// `W = diag(w) - w w^T` and its symmetric PSD square root.
#[derive(Clone, Debug)]
pub struct CenteredWeight {
    pub w: DMatrix<f64>,
    pub w_half: DMatrix<f64>,
}

pub fn centered_weight(weights: &DVector<f64>) -> Result<CenteredWeight> {
    let m = weights.len();
    if m == 0 {
        return Err(Error::InvalidArgument("empty weight vector".into()));
    }
    check_probability(weights, 1e-9)?;
    let mut w = -(weights * weights.transpose());
    for i in 0..m {
        w[(i, i)] += weights[i];
    }
    // W annihilates the ones vector exactly; project the root so it does too.
    let centering = DMatrix::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
    let root = psd_sqrt(&w);
    let w_half = &centering * root * &centering;
    let w_half = (&w_half + w_half.transpose()) * 0.5;
    Ok(CenteredWeight { w, w_half })
}

/// Noiseless measurements `Y[:, l] = h(beta_l)` and the noise covariance `R`.
#[derive(Clone, Debug)]
pub struct MeasurementSample {
    y: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl MeasurementSample {
    pub fn new(y: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if r.nrows() != y.nrows() || !r.is_square() {
            return Err(Error::Dimension {
                context: "measurement noise covariance",
                expected: y.nrows(),
                got: r.nrows(),
            });
        }
        if (&r - r.transpose()).amax() > 1e-12 * r.amax().max(1.0) {
            return Err(Error::Covariance { name: "R" });
        }
        cholesky_spd(&r, "R")?;
        Ok(Self { y, r })
    }

    /// Evaluates `h` column by column over `points`.
    pub fn from_model<F>(points: &DMatrix<f64>, r: DMatrix<f64>, mut h: F) -> Result<Self>
    where
        F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    {
        let n_y = r.nrows();
        let mut y = DMatrix::zeros(n_y, points.ncols());
        for (l, col) in points.column_iter().enumerate() {
            let z = h(&col.clone_owned())?;
            if z.len() != n_y {
                return Err(Error::Dimension {
                    context: "measurement function output",
                    expected: n_y,
                    got: z.len(),
                });
            }
            y.set_column(l, &z);
        }
        Self::new(y, r)
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }
}

/// Representer coefficients `B = (K + sigma_reg I)^{-1} Y^T` (m x n_y) of the
/// least-squares measurement operator. The weights do not enter: the minimizer
/// interpolates `h` at the sample points.
pub fn fit_measurement_operator(gram: &GramContext, meas: &MeasurementSample) -> Result<DMatrix<f64>> {
    if gram.size() != meas.len() {
        return Err(Error::Dimension {
            context: "measurement sample size",
            expected: gram.size(),
            got: meas.len(),
        });
    }
    Ok(gram.solve(&meas.y.transpose()))
}

/// Solves the weighted regression `min_B sum_l w_l |Y[:, l] - B^T k(beta_l)|^2` through
/// the row-scaled system `V (K + sigma_reg I) B = V Y^T` with `V = diag(sqrt(w))`.
///
/// For strictly positive weights this has the same minimizer as
/// [`fit_measurement_operator`]; it exists to check that independence numerically.
pub fn fit_measurement_operator_weighted(
    gram: &GramContext,
    meas: &MeasurementSample,
    w: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if gram.size() != meas.len() || w.len() != meas.len() {
        return Err(Error::Dimension {
            context: "weighted regression",
            expected: gram.size(),
            got: if w.len() != meas.len() { w.len() } else { meas.len() },
        });
    }
    if w.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("weighted regression needs strictly positive weights".into()));
    }
    let v = w.map(f64::sqrt);
    let mut lhs = gram.regularized();
    let mut rhs = meas.y.transpose();
    for (l, s) in v.iter().enumerate() {
        lhs.row_mut(l).scale_mut(*s);
        rhs.row_mut(l).scale_mut(*s);
    }
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("weighted regression system is singular".into()))
}

/// Predicted measurement `B^T K w`, the operator applied to the prediction embedding.
pub fn predicted_measurement_mean(gram: &GramContext, b: &DMatrix<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    if b.nrows() != gram.size() || w.len() != gram.size() {
        return Err(Error::Dimension {
            context: "predicted measurement",
            expected: gram.size(),
            got: if b.nrows() != gram.size() { b.nrows() } else { w.len() },
        });
    }
    Ok(b.transpose() * (gram.k() * w))
}

//! Kernel functions and Gram matrices with a regularized Cholesky factorization.

use nalgebra::{Cholesky, DMatrix, DVector, DVectorView, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::condition_estimate;

/// Kernel family and parameters.
///
/// Gaussian is `exp(-|x - x'|^2 / sigma)` and Laplace is `exp(-|x - x'|_1 / sigma)`;
/// note the bandwidth divides the squared distance directly (no factor of two).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Gaussian { sigma: f64 },
    Laplace { sigma: f64 },
    Polynomial { c: f64, d: u32 },
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Self {
        KernelSpec::Gaussian { sigma }
    }

    pub fn laplace(sigma: f64) -> Self {
        KernelSpec::Laplace { sigma }
    }

    pub fn polynomial(c: f64, d: u32) -> Self {
        KernelSpec::Polynomial { c, d }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            KernelSpec::Gaussian { sigma } | KernelSpec::Laplace { sigma } => {
                sigma.is_finite() && sigma > 0.0
            }
            KernelSpec::Polynomial { c, d } => c.is_finite() && c > 0.0 && d >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid kernel parameters {self:?}")))
        }
    }

    /// Same family with a new bandwidth; polynomial kernels are returned unchanged.
    pub fn with_sigma(self, sigma: f64) -> Self {
        match self {
            KernelSpec::Gaussian { .. } => KernelSpec::Gaussian { sigma },
            KernelSpec::Laplace { .. } => KernelSpec::Laplace { sigma },
            p => p,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Laplace { .. } => "laplace",
            KernelSpec::Polynomial { .. } => "polynomial",
        }
    }

    fn eval_unchecked(&self, x: DVectorView<f64>, y: DVectorView<f64>) -> f64 {
        match *self {
            KernelSpec::Gaussian { sigma } => {
                let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / sigma).exp()
            }
            KernelSpec::Laplace { sigma } => {
                let d1: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b).abs()).sum();
                (-d1 / sigma).exp()
            }
            KernelSpec::Polynomial { c, d } => (x.dot(&y) + c).powi(d as i32),
        }
    }
}

pub fn eval_kernel(spec: &KernelSpec, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            context: "kernel arguments",
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(spec.eval_unchecked(x.as_view(), y.as_view()))
}

/// Pairwise kernel matrix; both triangles are filled from a single evaluation.
pub fn kernel_matrix(spec: &KernelSpec, points: &DMatrix<f64>) -> DMatrix<f64> {
    let m = points.ncols();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = spec.eval_unchecked(points.column(i), points.column(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Default regularizer: `1e-8` times the mean diagonal of `K`.
pub fn default_sigma_reg(k: &DMatrix<f64>) -> f64 {
    1e-8 * k.trace() / k.nrows().max(1) as f64
}

/// Gram matrix over a fixed point set together with the factorization of `K + sigma_reg I`.
#[derive(Clone, Debug)]
pub struct GramContext {
    points: DMatrix<f64>,
    k: DMatrix<f64>,
    sigma_reg: f64,
    chol: Cholesky<f64, Dyn>,
}

impl GramContext {
    /// Builds from an arbitrary symmetric PSD matrix (used by the identity embedding).
    pub fn from_matrix(points: DMatrix<f64>, k: DMatrix<f64>, sigma_reg: f64) -> Result<Self> {
        if k.nrows() != points.ncols() || !k.is_square() {
            return Err(Error::Dimension {
                context: "Gram matrix",
                expected: points.ncols(),
                got: k.nrows(),
            });
        }
        if !(sigma_reg >= 0.0 && sigma_reg.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma_reg must be >= 0, got {sigma_reg}")));
        }
        let m = k.nrows();
        let mut reg = k.clone();
        for i in 0..m {
            reg[(i, i)] += sigma_reg;
        }
        let scale = reg.diagonal().amax();
        let chol = match Cholesky::new(reg.clone()) {
            Some(c) => c,
            None => {
                return Err(Error::SingularGram {
                    condition: condition_estimate(&reg),
                })
            }
        };
        // Cholesky only rejects non-positive pivots; tiny ones are just as unusable.
        let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b * b));
        if !(min_pivot > scale * f64::EPSILON * m as f64) {
            return Err(Error::SingularGram {
                condition: condition_estimate(&reg),
            });
        }
        Ok(Self {
            points,
            k,
            sigma_reg,
            chol,
        })
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn sigma_reg(&self) -> f64 {
        self.sigma_reg
    }

    pub fn size(&self) -> usize {
        self.k.nrows()
    }

    /// `K + sigma_reg I`.
    pub fn regularized(&self) -> DMatrix<f64> {
        let mut r = self.k.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += self.sigma_reg;
        }
        r
    }

    /// Solves `(K + sigma_reg I) Z = B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

/// Gram matrix over the columns of `points`.
///
/// `sigma_reg = None` selects [`default_sigma_reg`].
pub fn build_gram(spec: &KernelSpec, points: &DMatrix<f64>, sigma_reg: Option<f64>) -> Result<GramContext> {
    spec.validate()?;
    if points.ncols() == 0 {
        return Err(Error::InvalidArgument("Gram matrix needs at least one point".into()));
    }
    let k = kernel_matrix(spec, points);
    let reg = sigma_reg.unwrap_or_else(|| default_sigma_reg(&k));
    GramContext::from_matrix(points.clone(), k, reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn gaussian_at_zero_distance_is_one() {
        let k = KernelSpec::gaussian(1.0);
        assert_eq!(eval_kernel(&k, &v(&[0.3, -2.0]), &v(&[0.3, -2.0])).unwrap(), 1.0);
    }

    #[test]
    fn gaussian_unit_distance() {
        let k = KernelSpec::gaussian(1.0);
        let val = eval_kernel(&k, &v(&[0.0]), &v(&[1.0])).unwrap();
        assert!((val - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn laplace_uses_l1_distance() {
        let k = KernelSpec::laplace(1.0);
        let val = eval_kernel(&k, &v(&[0.0, 0.0]), &v(&[3.0, 4.0])).unwrap();
        assert!((val - (-7.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn polynomial_kernel() {
        let k = KernelSpec::polynomial(1.0, 2);
        let val = eval_kernel(&k, &v(&[1.0, 2.0]), &v(&[3.0, 0.5])).unwrap();
        assert_eq!(val, 25.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let k = KernelSpec::gaussian(1.0);
        assert!(matches!(
            eval_kernel(&k, &v(&[0.0]), &v(&[0.0, 1.0])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(KernelSpec::gaussian(0.0).validate().is_err());
        assert!(KernelSpec::laplace(-1.0).validate().is_err());
        assert!(KernelSpec::polynomial(0.0, 2).validate().is_err());
        assert!(KernelSpec::polynomial(1.0, 0).validate().is_err());
    }

    #[test]
    fn duplicate_points_without_regularizer_are_singular() {
        let pts = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let err = build_gram(&KernelSpec::gaussian(1.0), &pts, Some(0.0)).unwrap_err();
        assert!(matches!(err, Error::SingularGram { .. }), "{err}");
        // Regularization rescues it.
        assert!(build_gram(&KernelSpec::gaussian(1.0), &pts, None).is_ok());
    }

    #[test]
    fn two_point_gram() {
        let pts = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let g = build_gram(&KernelSpec::gaussian(1.0), &pts, Some(0.0)).unwrap();
        let e = (-1.0f64).exp();
        assert_eq!(g.k()[(0, 0)], 1.0);
        assert_eq!(g.k()[(1, 1)], 1.0);
        assert!((g.k()[(0, 1)] - e).abs() < 1e-15);
        assert_eq!(g.k()[(0, 1)], g.k()[(1, 0)]);
    }

    #[test]
    fn gaussian_gram_on_distinct_points_is_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = DMatrix::from_fn(2, 10, |_, _| rng.random_range(-3.0..3.0));
        let k = kernel_matrix(&KernelSpec::gaussian(1.0), &pts);
        assert!(min_eigenvalue(&k) > 0.0);
    }

    #[test]
    fn default_regularizer_scales_with_diagonal() {
        let k = DMatrix::from_diagonal(&v(&[2.0, 4.0]));
        assert!((default_sigma_reg(&k) - 3e-8).abs() < 1e-22);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gram_is_symmetric_with_unit_diagonal(
            seed in any::<u64>(),
            m in 1usize..25,
            laplace in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = DMatrix::from_fn(3, m, |_, _| rng.random_range(-5.0..5.0));
            let spec = if laplace { KernelSpec::laplace(1.5) } else { KernelSpec::gaussian(0.7) };
            let k = kernel_matrix(&spec, &pts);
            prop_assert_eq!(&k, &k.transpose());
            for i in 0..m {
                prop_assert_eq!(k[(i, i)], 1.0);
            }
        }

        #[test]
        fn solve_round_trip(seed in any::<u64>(), m in 1usize..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = DMatrix::from_fn(4, m, |_, _| rng.random_range(-2.0..2.0));
            let g = build_gram(&KernelSpec::gaussian(2.0), &pts, Some(1e-3)).unwrap();
            let reg = g.regularized();
            for _ in 0..100 {
                let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
                let z = g.solve_vec(&b);
                prop_assert!((&reg * z - &b).norm() <= 1e-9 * b.norm());
            }
        }
    }
}

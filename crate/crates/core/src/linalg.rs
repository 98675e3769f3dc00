//! Dense helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric PSD square root by eigendecomposition, negative eigenvalues clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let cutoff = scale * f64::EPSILON * m.nrows() as f64;
    let roots = eig
        .eigenvalues
        .map(|l| if l > cutoff { l.sqrt() } else { 0.0 });
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&roots) * v.transpose()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn cholesky_spd(m: &DMatrix<f64>, name: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Covariance { name });
    }
    Cholesky::new(m.clone()).ok_or(Error::Covariance { name })
}

/// Condition number estimate of a symmetric matrix from its eigenvalues.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, c);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), (b.nrows(), b.ncols())).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

pub fn stack_vectors(parts: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    DVector::from_iterator(n, parts.iter().flat_map(|p| p.iter().copied()))
}

pub fn stack_rows(parts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts.first().map_or(0, |p| p.ncols());
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for p in parts {
        out.view_mut((r0, 0), (p.nrows(), cols)).copy_from(p);
        r0 += p.nrows();
    }
    out
}

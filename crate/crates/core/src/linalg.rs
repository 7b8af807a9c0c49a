//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Returns (H^{1/2}, H^{-1/2}) via symmetric eigendecomposition.
pub fn sym_sqrt_pair(h: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if h.nrows() != h.ncols() || h.nrows() == 0 {
        return Err(Error::InvalidInput("metric must be a nonempty square matrix".into()));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("metric has non-finite entries".into()));
    }
    let asym = (h - h.transpose()).abs().max();
    if asym > 1e-10 * h.abs().max().max(1.0) {
        return Err(Error::Numerical(format!("metric not symmetric (asymmetry {asym:.2e})")));
    }
    let sym = (h + h.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    if eig.eigenvalues.min() <= 0.0 || lmax <= 0.0 {
        return Err(Error::Numerical(format!(
            "matrix not positive definite (smallest eigenvalue {:.3e})",
            eig.eigenvalues.min()
        )));
    }
    let floor = 1e-14 * lmax;
    let lam: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(floor)).collect();
    let v = &eig.eigenvectors;
    let sq = DVector::from_iterator(lam.len(), lam.iter().map(|l| l.sqrt()));
    let isq = DVector::from_iterator(lam.len(), lam.iter().map(|l| 1.0 / l.sqrt()));
    let root = v * DMatrix::from_diagonal(&sq) * v.transpose();
    let inv_root = v * DMatrix::from_diagonal(&isq) * v.transpose();
    Ok(((&root + root.transpose()) * 0.5, (&inv_root + inv_root.transpose()) * 0.5))
}

/// Solves a Hermitian system through its eigendecomposition and reports the
/// smallest eigenvalue. Fails below `min_eig`.
pub fn hermitian_solve(
    a: &DMatrix<Complex64>,
    b: &DVector<Complex64>,
    min_eig: f64,
) -> Result<(DVector<Complex64>, f64)> {
    let herm = (a + a.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let lmin = eig.eigenvalues.min();
    if !(lmin > min_eig) {
        return Err(Error::Conditioning { min_eig: lmin });
    }
    let v = &eig.eigenvectors;
    let mut coef = v.adjoint() * b;
    for (c, l) in coef.iter_mut().zip(eig.eigenvalues.iter()) {
        *c /= *l;
    }
    Ok((v * coef, lmin))
}

pub fn min_eigenvalue_hermitian(a: &DMatrix<Complex64>) -> f64 {
    let herm = (a + a.adjoint()) * Complex64::new(0.5, 0.0);
    herm.symmetric_eigen().eigenvalues.min()
}

pub fn max_eigenvalue_sym(a: &DMatrix<f64>) -> f64 {
    let s = (a + a.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.max()
}

pub fn spectral_norm_c(a: &DMatrix<Complex64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

pub fn cnorm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn rnorm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves a real symmetric positive definite system by Cholesky.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

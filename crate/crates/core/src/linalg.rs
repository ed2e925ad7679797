//! Small dense helpers shared by the spectral and objective code.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_SWEEPS: usize = 10_000;

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>, what: &'static str) -> Result<Vec<f64>> {
    let eig = SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_SWEEPS)
        .ok_or(Error::EigenFailed(what))?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailed(what));
    }
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Full symmetric eigendecomposition.
pub fn sym_eigen(m: &DMatrix<f64>, what: &'static str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_SWEEPS).ok_or(Error::EigenFailed(what))
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix, dropping eigenvalues
/// at or below `rel_tol * λ_max`.
pub fn psd_pinv(m: &DMatrix<f64>, rel_tol: f64, what: &'static str) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m, what)?;
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
    let cut = rel_tol * lmax;
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > cut {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / lam;
        }
    }
    Ok(out)
}

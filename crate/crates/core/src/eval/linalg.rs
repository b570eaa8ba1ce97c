use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Ridge added to covariances estimated from fewer samples than dimensions.
pub const COV_RIDGE: f64 = 1e-6;

/// Relative tolerance for negative eigenvalues treated as round-off.
const PSD_TOL: f64 = 1e-8;

/// Feature means and unbiased covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// A ridge was added because there were fewer samples than dimensions.
    pub regularized: bool,
}

pub fn to_matrix(features: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = features.len();
    let d = features.first().map_or(0, Vec::len);
    if n == 0 || d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(CoreError::invalid("feature set must be a nonempty rectangular array"));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| features[i][j]))
}

pub fn gaussian(features: &[Vec<f64>]) -> Result<Gaussian> {
    let x = to_matrix(features)?;
    let (n, d) = x.shape();
    if n < 2 {
        return Err(CoreError::invalid("covariance needs at least two samples"));
    }
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n - 1) as f64;
    let regularized = n < d;
    if regularized {
        log::warn!("{n} samples for {d} dimensions; adding {COV_RIDGE}·I to the covariance");
        for i in 0..d {
            cov[(i, i)] += COV_RIDGE;
        }
    }
    Ok(Gaussian { mean, cov, regularized })
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, with round-off negatives set to zero.
fn psd_eigen(a: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !a.is_square() {
        return Err(CoreError::invalid("matrix must be square"));
    }
    let mut eig = SymmetricEigen::new(symmetrize(a));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    for v in eig.eigenvalues.iter_mut() {
        if *v < -PSD_TOL * scale {
            return Err(CoreError::Numeric(format!("matrix is not positive semi-definite (eigenvalue {v:e})")));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

/// Symmetric `B` with `B·B = A` for positive semi-definite `A`.
pub fn matrix_sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(a)?;
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * root * eig.eigenvectors.transpose())
}

/// Outcome of one Fréchet distance evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fid {
    pub value: f64,
    /// Either covariance needed a ridge.
    pub regularized: bool,
    /// Negative residue removed by clamping at zero.
    pub clamped: f64,
}

/// `‖µ₁−µ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`.
///
/// The trace of the cross term is the sum of square-rooted eigenvalues of
/// `Σ₁^{1/2} Σ₂ Σ₁^{1/2}`, which is symmetric and has the same spectrum as `Σ₁Σ₂`.
pub fn fid_from_gaussians(a: &Gaussian, b: &Gaussian) -> Result<Fid> {
    if a.mean.len() != b.mean.len() {
        return Err(CoreError::invalid("feature dimensions differ"));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let root_a = matrix_sqrt_psd(&a.cov)?;
    let inner = &root_a * &b.cov * &root_a;
    let cross: f64 = psd_eigen(&inner)?.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let raw = diff + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    let clamped = if raw < 0.0 { -raw } else { 0.0 };
    if clamped > 0.0 {
        log::debug!("clamping FID residue {raw:e} to zero");
    }
    Ok(Fid {
        value: raw.max(0.0),
        regularized: a.regularized || b.regularized,
        clamped,
    })
}

pub fn fid(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Fid> {
    fid_from_gaussians(&gaussian(x)?, &gaussian(y)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bipo_tensor::Rng;

    fn random_psd(d: usize, rank: usize, rng: &mut Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(d, rank, |_, _| rng.normal());
        &g * g.transpose()
    }

    #[test]
    fn sqrt_of_diagonal() {
        let b = matrix_sqrt_psd(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]))).unwrap();
        assert!((b - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))).norm() < 1e-12);
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((matrix_sqrt_psd(&i).unwrap() - &i).norm() < 1e-12);
    }

    #[test]
    fn sqrt_reconstructs_random_psd() {
        let mut rng = Rng::new(3);
        for (d, rank) in [(5, 5), (8, 3), (32, 32)] {
            let a = random_psd(d, rank, &mut rng);
            let b = matrix_sqrt_psd(&a).unwrap();
            assert!((&b * &b - &a).norm() / a.norm() < 1e-8);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matrix_sqrt_psd(&a).is_err());
    }

    #[test]
    fn ridge_when_undersampled() {
        let g = gaussian(&[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 2.0]]).unwrap();
        assert!(g.regularized);
        assert!((g.cov[(2, 2)] - COV_RIDGE).abs() < 1e-18);
    }
}

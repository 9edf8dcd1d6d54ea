//! Small sampling helpers shared by the stress and portfolio simulations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Empirical quantile of sorted data with linear interpolation between ranks
/// (`pos = p (n - 1)`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + w * (sorted[hi] - sorted[lo])
    }
}

/// Sorts `values` in place and returns the requested quantiles.
pub fn quantiles(values: &mut [f64], ps: &[f64]) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    ps.iter().map(|&p| quantile_sorted(values, p)).collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Symmetric square root `S` with `S S^T = cov`, tolerant of singular
/// covariances. Fails if `cov` has a clearly negative eigenvalue.
pub fn cov_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if cov.iter().all(|v| *v == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    let eig = SymmetricEigen::new((cov + cov.transpose()) * 0.5);
    let scale = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale.max(1e-300)) {
        return Err(Error::Numerical("covariance is not positive semidefinite".into()));
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root))
}

/// Draws `mean + root * z` with `z` standard normal.
pub fn draw_gaussian(mean: &DVector<f64>, root: &DMatrix<f64>, rng: &mut impl Rng) -> DVector<f64> {
    let z = DVector::from_fn(root.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + root * z
}

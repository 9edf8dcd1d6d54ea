//! Kernel PCA over the reference curve.
//!
//! Samples are maturities and features are time points: the i-th sample is
//! the whole time series of the i-th tenor. The Gram matrix is used raw (no
//! centering). Retained eigenvectors `Z` double as the discrete basis on the
//! maturity grid, so time-t factors are `U_t = Y_t · Z`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Error, Result};
use crate::exec::Execution;
use crate::market_data::{MaturityGrid, Month, YieldPanel};

/// Relative eigenvalue floor below which components cannot be retained.
pub const EIGEN_TOL: f64 = 1e-10;

const PREIMAGE_TOL: f64 = 1e-8;
const PREIMAGE_MAX_ITER: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// RBF width, `k(x, y) = exp(-gamma * |x - y|^2)`; equals `1 / (2 sigma^2)`.
    pub gamma: f64,
}

impl KernelConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return invalid(format!("kernel gamma must be positive, got {gamma}"));
        }
        Ok(KernelConfig { gamma })
    }

    pub fn from_sigma(sigma: f64) -> Result<Self> {
        Self::new(1.0 / (2.0 * sigma * sigma))
    }
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn rbf_kernel(x: &[f64], y: &[f64], config: &KernelConfig) -> Result<f64> {
    if x.len() != y.len() {
        return dim(format!("kernel inputs have lengths {} and {}", x.len(), y.len()));
    }
    Ok((-config.gamma * sq_dist(x, y)).exp())
}

/// Tenor time series as sample rows (N x T), row-major for cheap slicing.
fn samples_of(panel: &YieldPanel) -> Result<Vec<Vec<f64>>> {
    if !panel.is_complete() {
        return invalid("kernel PCA needs a complete panel; interpolate missing cells first");
    }
    let v = panel.values();
    Ok((0..panel.n_tenors())
        .map(|c| v.column(c).iter().copied().collect())
        .collect())
}

fn gram(samples: &[Vec<f64>], config: &KernelConfig) -> DMatrix<f64> {
    let n = samples.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = (-config.gamma * sq_dist(&samples[i], &samples[j])).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// N x N Gram matrix between the tenor time series of a complete panel.
pub fn kernel_matrix(panel: &YieldPanel, config: &KernelConfig) -> Result<DMatrix<f64>> {
    Ok(gram(&samples_of(panel)?, config))
}

/// Eigen-decomposition artifacts of a kernel matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpectrum {
    pub kernel: DMatrix<f64>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors, N x Q.
    pub z: DMatrix<f64>,
    /// Scores `Z diag(sqrt(lambda))`.
    pub a: DMatrix<f64>,
    /// Projection weights `A diag(1 / lambda)`.
    pub w: DMatrix<f64>,
    /// Every eigenvalue of the kernel, descending.
    pub full_spectrum: DVector<f64>,
}

impl KernelSpectrum {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Share of `trace(K)` carried by the retained components.
    pub fn retained_energy(&self) -> f64 {
        self.eigenvalues.sum() / self.kernel.trace()
    }
}

/// Number of eigenvalues above the relative tolerance.
pub fn numerical_rank(k: &DMatrix<f64>) -> usize {
    let mut ev: Vec<f64> = SymmetricEigen::new(k.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let top = ev.first().copied().unwrap_or(0.0);
    ev.iter().filter(|&&l| l > EIGEN_TOL * top).count()
}

/// Eigen-decomposes a symmetric kernel matrix and keeps `q` components.
///
/// Each eigenvector is signed so that its largest-magnitude entry is
/// positive, which makes the result reproducible.
pub fn fit_kpca(k: &DMatrix<f64>, q: usize) -> Result<KernelSpectrum> {
    let n = k.nrows();
    if k.ncols() != n || n == 0 {
        return dim(format!("kernel matrix must be square, got {:?}", k.shape()));
    }
    let scale = k.amax().max(1.0);
    if (k - k.transpose()).amax() > 1e-12 * scale {
        return invalid("kernel matrix is not symmetric");
    }
    if q == 0 {
        return invalid("at least one component must be retained");
    }
    let eig = SymmetricEigen::new(k.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let top = eig.eigenvalues[order[0]];
    let available = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > EIGEN_TOL * top)
        .count();
    if q > available {
        return invalid(format!(
            "requested {q} components but the kernel has numerical rank {available}"
        ));
    }
    let mut z = DMatrix::zeros(n, q);
    let mut eigenvalues = DVector::zeros(q);
    for (col, &idx) in order.iter().take(q).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        z.set_column(col, &v);
        eigenvalues[col] = eig.eigenvalues[idx];
    }
    let mut a = z.clone();
    let mut w = z.clone();
    for c in 0..q {
        let l = eigenvalues[c];
        a.column_mut(c).scale_mut(l.sqrt());
        w.column_mut(c).scale_mut(1.0 / l.sqrt());
    }
    let full_spectrum = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    Ok(KernelSpectrum {
        kernel: k.clone(),
        eigenvalues,
        z,
        a,
        w,
        full_spectrum,
    })
}

/// Kernel PCA trained on a reference panel.
#[derive(Debug, Clone, PartialEq)]
pub struct KpcaModel {
    pub spectrum: KernelSpectrum,
    pub config: KernelConfig,
    pub grid: MaturityGrid,
    samples: Vec<Vec<f64>>,
}

impl KpcaModel {
    pub fn train(panel: &YieldPanel, config: KernelConfig, q: usize) -> Result<Self> {
        let samples = samples_of(panel)?;
        let spectrum = fit_kpca(&gram(&samples, &config), q)?;
        Ok(KpcaModel {
            spectrum,
            config,
            grid: panel.grid().clone(),
            samples,
        })
    }

    pub fn n_components(&self) -> usize {
        self.spectrum.n_components()
    }

    pub fn feature_len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// Kernel scores of a new time series against every training sample.
    pub fn project(&self, sample: &[f64]) -> Result<DVector<f64>> {
        if sample.len() != self.feature_len() {
            return dim(format!(
                "sample has {} time points, model was trained on {}",
                sample.len(),
                self.feature_len()
            ));
        }
        let kv: Vec<f64> = self
            .samples
            .iter()
            .map(|s| (-self.config.gamma * sq_dist(sample, s)).exp())
            .collect();
        let kv = DVector::from_vec(kv);
        Ok(self.spectrum.w.tr_mul(&kv))
    }

    /// Fixed-point pre-image of the feature-space projection with scores
    /// `scores`, started at `start`. Returns `None` when the iteration
    /// collapses (all kernel weights vanish).
    pub fn preimage(&self, scores: &DVector<f64>, start: &[f64]) -> Option<Vec<f64>> {
        let coeffs = &self.spectrum.w * scores;
        let t = start.len();
        let mut z = start.to_vec();
        let mut next = vec![0.0; t];
        for _ in 0..PREIMAGE_MAX_ITER {
            let mut denom = 0.0;
            next.iter_mut().for_each(|v| *v = 0.0);
            for (j, s) in self.samples.iter().enumerate() {
                let wj = coeffs[j] * (-self.config.gamma * sq_dist(&z, s)).exp();
                denom += wj;
                for (acc, x) in next.iter_mut().zip(s) {
                    *acc += wj * x;
                }
            }
            if !denom.is_finite() || denom.abs() < 1e-300 {
                return None;
            }
            next.iter_mut().for_each(|v| *v /= denom);
            if next.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let change = sq_dist(&next, &z).sqrt();
            let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            std::mem::swap(&mut z, &mut next);
            if change / norm < PREIMAGE_TOL {
                break;
            }
        }
        Some(z)
    }

    /// Mean squared pre-image error over the training samples, or `None` if
    /// any pre-image iteration collapses.
    pub fn preimage_error(&self) -> Option<f64> {
        let mut total = 0.0;
        for x in &self.samples {
            let scores = self.project(x).ok()?;
            let z = self.preimage(&scores, x)?;
            total += sq_dist(x, &z);
        }
        Some(total / self.samples.len() as f64)
    }
}

/// Time-indexed factor panel `U`, T x Q.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    pub dates: Vec<Month>,
    pub values: DMatrix<f64>,
}

impl FactorPanel {
    pub fn n_factors(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_dates(&self) -> usize {
        self.values.nrows()
    }

    pub fn slice(&self, start: usize, end: usize) -> FactorPanel {
        FactorPanel {
            dates: self.dates[start..end].to_vec(),
            values: self.values.rows(start, end - start).into_owned(),
        }
    }
}

/// Projects each date's reference curve on the eigenvector basis: `U = Y Z`.
pub fn extract_factors(model: &KpcaModel, panel: &YieldPanel) -> Result<FactorPanel> {
    if panel.grid() != &model.grid {
        return dim("panel and kernel model are on different maturity grids");
    }
    if !panel.is_complete() {
        return invalid("factor extraction needs a complete panel");
    }
    Ok(FactorPanel {
        dates: panel.dates().to_vec(),
        values: panel.values() * &model.spectrum.z,
    })
}

/// `curve_i(tau_j) = sum_q gamma[i][q] Z[j][q]`, an N x N table.
pub fn reconstruct_functional_coefficients(
    loadings: &DMatrix<f64>,
    model: &KpcaModel,
) -> Result<DMatrix<f64>> {
    if loadings.ncols() != model.n_components() {
        return dim(format!(
            "loadings have {} columns, model has {} components",
            loadings.ncols(),
            model.n_components()
        ));
    }
    Ok(loadings * model.spectrum.z.transpose())
}

/// Inclusive arithmetic grid of candidate gammas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for GammaGrid {
    fn default() -> Self {
        GammaGrid {
            lo: 0.001,
            hi: 1.0,
            step: 0.001,
        }
    }
}

impl GammaGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.lo > 0.0) || !(self.step > 0.0) || self.hi < self.lo {
            return invalid(format!("empty gamma grid {self:?}"));
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n)
            .map(|k| {
                let g = self.lo + k as f64 * self.step;
                (g * 1e12).round() / 1e12
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSearch {
    pub gamma: f64,
    pub error: f64,
    /// `(gamma, error)` for every evaluated grid point; `None` marks points
    /// where the requested rank was unavailable or the pre-image collapsed.
    pub profile: Vec<(f64, Option<f64>)>,
}

/// Picks the gamma with the smallest mean pre-image error, ties going to the
/// smaller gamma.
pub fn grid_search_gamma(
    panel: &YieldPanel,
    q: usize,
    grid: &GammaGrid,
    exec: Execution,
) -> Result<GammaSearch> {
    let points = grid.points()?;
    let samples = samples_of(panel)?;
    let mse = exec.map_slice(&points, |&g| {
        let config = KernelConfig { gamma: g };
        let spectrum = fit_kpca(&gram(&samples, &config), q).ok()?;
        let model = KpcaModel {
            spectrum,
            config,
            grid: panel.grid().clone(),
            samples: samples.clone(),
        };
        model.preimage_error().filter(|e| e.is_finite())
    });
    let mut best: Option<(f64, f64)> = None;
    for (&g, e) in points.iter().zip(&mse) {
        if let Some(e) = *e {
            if best.is_none_or(|(_, be)| e < be) {
                best = Some((g, e));
            }
        }
    }
    let (gamma, error) = best.ok_or_else(|| {
        Error::Numerical("every gamma grid point failed (rank or pre-image)".into())
    })?;
    Ok(GammaSearch {
        gamma,
        error,
        profile: points.into_iter().zip(mse).collect(),
    })
}

/// Audit dump of a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KpcaDump {
    pub gamma: f64,
    pub eigenvalues: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

impl From<&KpcaModel> for KpcaDump {
    fn from(m: &KpcaModel) -> Self {
        KpcaDump {
            gamma: m.config.gamma,
            eigenvalues: m.spectrum.eigenvalues.iter().copied().collect(),
            z: matrix_rows(&m.spectrum.z),
            a: matrix_rows(&m.spectrum.a),
        }
    }
}

//! Deflated linear-Gaussian state-space form and its Kalman filter.
//!
//! Measurement: `Z_t = Y_t - Lambda mu - Gamma U_t = Lambda X_t + eps_t`.
//! State: `X_t = diag(psi1) X_{t-1} + eta_t`, `eta_t ~ N(0, diag(sigma_eta^2))`.
//! Missing tenors are dropped from the update at that date.

use std::borrow::Cow;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Error, Result};
use crate::kpca::FactorPanel;
use crate::market_data::YieldPanel;
use crate::nelson_siegel::NsLoadingMatrix;

/// Half-width of the tridiagonal correlation range that keeps the band
/// structure positive definite for `n` tenors.
pub fn band_rho_bound(n: usize) -> f64 {
    let n = n as f64;
    0.5 * (1.0 + std::f64::consts::PI.powi(2) / (1.0 + 4.0 * n * n)).sqrt()
}

/// Maps an unconstrained `theta` into `(-B_n, B_n)`.
pub fn rho_from_theta(theta: f64, n: usize) -> f64 {
    let b = band_rho_bound(n);
    2.0 * b / (1.0 + (-theta).exp()) - b
}

/// Inverse of [`rho_from_theta`].
pub fn theta_from_rho(rho: f64, n: usize) -> f64 {
    let b = band_rho_bound(n);
    let s = (rho + b) / (2.0 * b);
    (s / (1.0 - s)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovKind {
    Diagonal,
    Band,
    FullAr,
}

impl CovKind {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(CovKind::Diagonal),
            2 => Ok(CovKind::Band),
            3 => Ok(CovKind::FullAr),
            _ => invalid(format!("covariance structure must be 1, 2 or 3, got {i}")),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            CovKind::Diagonal => 1,
            CovKind::Band => 2,
            CovKind::FullAr => 3,
        }
    }
}

/// Measurement-error covariance structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovStructure {
    /// Independent errors with per-tenor standard deviations.
    Diag { sigma: Vec<f64> },
    /// Neighbouring tenors share correlation `rho_from_theta(theta, N)`.
    Band { sigma: Vec<f64>, theta: f64 },
    /// Common variance with correlation `rho^|i-j|`.
    FullAr { sigma: f64, rho: f64 },
}

impl CovStructure {
    pub fn kind(&self) -> CovKind {
        match self {
            CovStructure::Diag { .. } => CovKind::Diagonal,
            CovStructure::Band { .. } => CovKind::Band,
            CovStructure::FullAr { .. } => CovKind::FullAr,
        }
    }
}

/// Builds the N x N measurement covariance and checks it factorises.
pub fn build_sigma_eps(cov: &CovStructure, n: usize) -> Result<DMatrix<f64>> {
    let check_sd = |s: &[f64]| -> Result<()> {
        if s.len() != n {
            return dim(format!("expected {n} standard deviations, got {}", s.len()));
        }
        if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return invalid("standard deviations must be positive and finite");
        }
        Ok(())
    };
    let m = match cov {
        CovStructure::Diag { sigma } => {
            check_sd(sigma)?;
            DMatrix::from_diagonal(&DVector::from_iterator(n, sigma.iter().map(|s| s * s)))
        }
        CovStructure::Band { sigma, theta } => {
            check_sd(sigma)?;
            if n < 2 {
                return invalid("band structure needs at least two tenors");
            }
            let rho = rho_from_theta(*theta, n);
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                m[(i, i)] = sigma[i] * sigma[i];
                if i + 1 < n {
                    let c = rho * sigma[i] * sigma[i + 1];
                    m[(i, i + 1)] = c;
                    m[(i + 1, i)] = c;
                }
            }
            m
        }
        CovStructure::FullAr { sigma, rho } => {
            if !(*sigma > 0.0) || !sigma.is_finite() {
                return invalid("standard deviation must be positive and finite");
            }
            if !(rho.abs() < 1.0) {
                return invalid(format!("correlation must lie in (-1, 1), got {rho}"));
            }
            let s2 = sigma * sigma;
            DMatrix::from_fn(n, n, |i, j| s2 * rho.powi(i.abs_diff(j) as i32))
        }
    };
    if Cholesky::new(m.clone()).is_none() {
        return Err(Error::Numerical(
            "measurement covariance is not positive definite".into(),
        ));
    }
    Ok(m)
}

/// Full parameter set of the DNS / DNS-FR state-space model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmParams {
    pub lambda: f64,
    pub psi0: Vector3<f64>,
    pub psi1: Vector3<f64>,
    pub sigma_eta: Vector3<f64>,
    pub cov: CovStructure,
    /// N x Q regression loadings; zero columns for plain DNS.
    pub gamma: DMatrix<f64>,
}

impl SsmParams {
    pub fn validate(&self) -> Result<()> {
        if self.psi1.iter().any(|p| !(p.abs() < 1.0)) {
            return invalid(format!("autoregressive coefficients must lie in (-1, 1): {:?}", self.psi1));
        }
        if self.sigma_eta.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return invalid("state noise standard deviations must be non-negative");
        }
        if self.psi0.iter().any(|p| !p.is_finite()) || self.gamma.iter().any(|g| !g.is_finite()) {
            return invalid("non-finite parameter");
        }
        Ok(())
    }

    /// Unconditional factor mean `psi0 / (1 - psi1)`.
    pub fn mu(&self) -> Vector3<f64> {
        self.psi0.component_div(&Vector3::repeat(1.0).zip_map(&self.psi1, |o, p| o - p))
    }

    pub fn n_factors(&self) -> usize {
        self.gamma.ncols()
    }

    /// Stationary state covariance `diag(sigma_eta^2 / (1 - psi1^2))`.
    pub fn stationary_cov(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from_fn(|i, _| {
            self.sigma_eta[i].powi(2) / (1.0 - self.psi1[i].powi(2))
        }))
    }

    pub fn sigma_eps(&self, n: usize) -> Result<DMatrix<f64>> {
        build_sigma_eps(&self.cov, n)
    }
}

/// Removes the factor mean and regression term:
/// `Z_t = Y_t - Lambda mu - Gamma U_t` on recorded cells.
pub fn deflate(
    panel: &YieldPanel,
    factors: Option<&FactorPanel>,
    params: &SsmParams,
    loadings: &NsLoadingMatrix,
) -> Result<YieldPanel> {
    let (t, n) = (panel.n_dates(), panel.n_tenors());
    if loadings.n_tenors() != n {
        return dim(format!("loadings have {} rows, panel has {n} tenors", loadings.n_tenors()));
    }
    let mean = &loadings.matrix * params.mu();
    let regression = match factors {
        Some(u) => {
            if u.n_dates() != t {
                return dim(format!("factor panel has {} dates, yields have {t}", u.n_dates()));
            }
            if params.gamma.shape() != (n, u.n_factors()) {
                return dim(format!(
                    "gamma is {:?}, expected ({n}, {})",
                    params.gamma.shape(),
                    u.n_factors()
                ));
            }
            Some(&u.values * params.gamma.transpose())
        }
        None => None,
    };
    let mut z = panel.values().clone();
    for r in 0..t {
        for c in 0..n {
            if panel.is_observed(r, c) {
                let mut v = z[(r, c)] - mean[c];
                if let Some(g) = &regression {
                    v -= g[(r, c)];
                }
                z[(r, c)] = v;
            }
        }
    }
    panel.with_values(z)
}

fn symmetrize3(p: &Matrix3<f64>) -> Matrix3<f64> {
    (p + p.transpose()) * 0.5
}

/// One prediction step.
pub fn kf_predict(
    a_prev: &Vector3<f64>,
    p_prev: &Matrix3<f64>,
    params: &SsmParams,
) -> (Vector3<f64>, Matrix3<f64>) {
    let psi = &params.psi1;
    let a = a_prev.component_mul(psi);
    let mut p = Matrix3::from_fn(|i, j| psi[i] * p_prev[(i, j)] * psi[j]);
    for i in 0..3 {
        p[(i, i)] += params.sigma_eta[i] * params.sigma_eta[i];
    }
    (a, symmetrize3(&p))
}

/// Result of one measurement update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStep {
    pub a: Vector3<f64>,
    pub p: Matrix3<f64>,
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
}

struct Restricted<'a> {
    loadings: Cow<'a, DMatrix<f64>>,
    sigma: Cow<'a, DMatrix<f64>>,
}

fn restrict<'a>(rows: &[usize], loadings: &'a DMatrix<f64>, sigma: &'a DMatrix<f64>) -> Restricted<'a> {
    if rows.len() == loadings.nrows() && rows.iter().enumerate().all(|(i, &r)| i == r) {
        return Restricted {
            loadings: Cow::Borrowed(loadings),
            sigma: Cow::Borrowed(sigma),
        };
    }
    Restricted {
        loadings: Cow::Owned(loadings.select_rows(rows)),
        sigma: Cow::Owned(sigma.select_rows(rows).select_columns(rows)),
    }
}

/// Core update; also returns the Cholesky factor of `L_t` for the
/// likelihood term.
fn update_inner(
    a_pred: &Vector3<f64>,
    p_pred: &Matrix3<f64>,
    z: &DVector<f64>,
    lam: &DMatrix<f64>,
    sig: &DMatrix<f64>,
) -> Result<(UpdateStep, Cholesky<f64, Dyn>)> {
    let lp = lam * p_pred; // m x 3
    let l = &lp * lam.transpose() + sig;
    let chol = Cholesky::new(l.clone())
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
    let e = z - lam * a_pred;
    // X = L^{-1} Lambda P, so the gain is X^T
    let x = chol.solve(&lp);
    let a = a_pred + x.tr_mul(&e);
    let p = p_pred - x.tr_mul(&lp);
    let p = Matrix3::from_fn(|i, j| p[(i, j)]);
    Ok((
        UpdateStep {
            a,
            p: symmetrize3(&p),
            innovation: e,
            innovation_cov: l,
        },
        chol,
    ))
}

/// Measurement update using only the recorded rows `obs_rows`.
///
/// With no recorded rows the prediction passes through unchanged.
pub fn kf_update(
    a_pred: &Vector3<f64>,
    p_pred: &Matrix3<f64>,
    z_obs: &DVector<f64>,
    obs_rows: &[usize],
    loadings: &NsLoadingMatrix,
    sigma_eps: &DMatrix<f64>,
) -> Result<UpdateStep> {
    if z_obs.len() != obs_rows.len() {
        return dim(format!(
            "{} observations for {} rows",
            z_obs.len(),
            obs_rows.len()
        ));
    }
    if obs_rows.is_empty() {
        return Ok(UpdateStep {
            a: *a_pred,
            p: *p_pred,
            innovation: DVector::zeros(0),
            innovation_cov: DMatrix::zeros(0, 0),
        });
    }
    let r = restrict(obs_rows, &loadings.matrix, sigma_eps);
    update_inner(a_pred, p_pred, z_obs, &r.loadings, &r.sigma).map(|(u, _)| u)
}

fn loglik_term(e: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let mut v = e.clone();
    // forward substitution against the lower factor
    for i in 0..v.len() {
        let mut s = v[i];
        for k in 0..i {
            s -= l[(i, k)] * v[k];
        }
        v[i] = s / l[(i, i)];
    }
    let logdet: f64 = (0..v.len()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * (v.dot(&v) + logdet)
}

/// Initial state for the deflated filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterInit {
    pub a0: Vector3<f64>,
    pub p0: Matrix3<f64>,
}

impl FilterInit {
    /// Zero mean with the stationary state covariance.
    pub fn stationary(params: &SsmParams) -> Self {
        FilterInit {
            a0: Vector3::zeros(),
            p0: params.stationary_cov(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub a_pred: Vec<Vector3<f64>>,
    pub p_pred: Vec<Matrix3<f64>>,
    pub a_filt: Vec<Vector3<f64>>,
    pub p_filt: Vec<Matrix3<f64>>,
    pub innovations: Vec<DVector<f64>>,
    pub innovation_cov: Vec<DMatrix<f64>>,
    pub obs_rows: Vec<Vec<usize>>,
    pub loglik: f64,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.a_filt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_filt.is_empty()
    }
}

struct StepRecord<'a> {
    a_pred: Vector3<f64>,
    p_pred: Matrix3<f64>,
    update: &'a UpdateStep,
    rows: &'a [usize],
}

fn filter_pass(
    z: &YieldPanel,
    params: &SsmParams,
    loadings: &NsLoadingMatrix,
    sigma_eps: &DMatrix<f64>,
    init: &FilterInit,
    mut sink: impl FnMut(StepRecord<'_>),
) -> Result<f64> {
    let n = z.n_tenors();
    if loadings.n_tenors() != n || sigma_eps.shape() != (n, n) {
        return dim("loadings, measurement covariance and panel disagree on tenor count");
    }
    if z.n_dates() == 0 {
        return Err(Error::InsufficientData("filter needs at least one date".into()));
    }
    let mut a = init.a0;
    let mut p = init.p0;
    let mut loglik = 0.0;
    let mut rows = Vec::with_capacity(n);
    for t in 0..z.n_dates() {
        let (a_pred, p_pred) = kf_predict(&a, &p, params);
        rows.clear();
        rows.extend((0..n).filter(|&i| z.is_observed(t, i)));
        let update = if rows.is_empty() {
            UpdateStep {
                a: a_pred,
                p: p_pred,
                innovation: DVector::zeros(0),
                innovation_cov: DMatrix::zeros(0, 0),
            }
        } else {
            let obs = DVector::from_iterator(rows.len(), rows.iter().map(|&i| z.values()[(t, i)]));
            let r = restrict(&rows, &loadings.matrix, sigma_eps);
            let (u, chol) = update_inner(&a_pred, &p_pred, &obs, &r.loadings, &r.sigma)?;
            loglik += loglik_term(&u.innovation, &chol);
            u
        };
        a = update.a;
        p = update.p;
        sink(StepRecord {
            a_pred,
            p_pred,
            update: &update,
            rows: &rows,
        });
    }
    Ok(loglik)
}

/// Runs the filter over a deflated panel, keeping every intermediate.
pub fn run_filter(
    z: &YieldPanel,
    params: &SsmParams,
    loadings: &NsLoadingMatrix,
    init: &FilterInit,
) -> Result<FilterOutput> {
    let sigma_eps = params.sigma_eps(z.n_tenors())?;
    let t = z.n_dates();
    let mut out = FilterOutput {
        a_pred: Vec::with_capacity(t),
        p_pred: Vec::with_capacity(t),
        a_filt: Vec::with_capacity(t),
        p_filt: Vec::with_capacity(t),
        innovations: Vec::with_capacity(t),
        innovation_cov: Vec::with_capacity(t),
        obs_rows: Vec::with_capacity(t),
        loglik: 0.0,
    };
    out.loglik = filter_pass(z, params, loadings, &sigma_eps, init, |s| {
        out.a_pred.push(s.a_pred);
        out.p_pred.push(s.p_pred);
        out.a_filt.push(s.update.a);
        out.p_filt.push(s.update.p);
        out.innovations.push(s.update.innovation.clone());
        out.innovation_cov.push(s.update.innovation_cov.clone());
        out.obs_rows.push(s.rows.to_vec());
    })?;
    Ok(out)
}

/// Log-likelihood only; same arithmetic as [`run_filter`] without storage.
pub fn filter_loglik(
    z: &YieldPanel,
    params: &SsmParams,
    loadings: &NsLoadingMatrix,
    init: &FilterInit,
) -> Result<f64> {
    let sigma_eps = params.sigma_eps(z.n_tenors())?;
    filter_pass(z, params, loadings, &sigma_eps, init, |_| {})
}

/// Log-likelihood via the information form on fully observed dates.
///
/// With `C = Sigma^{-1} Lambda` and `M = Lambda' C`, a full update needs only
/// 3 x 3 algebra: `G = (I + P M)^{-1} P`, `a += G C' e`, `P = G`,
/// `e' L^{-1} e = e' Sigma^{-1} e - d' G d` with `d = C' e`, and
/// `log|L| = log|Sigma| + log|I + P M|`. Dates with missing tenors use the
/// ordinary update. Agrees with [`run_filter`] up to rounding and is meant
/// for the optimiser's inner loop.
pub fn fast_loglik(
    z: &YieldPanel,
    params: &SsmParams,
    loadings: &NsLoadingMatrix,
    init: &FilterInit,
) -> Result<f64> {
    let n = z.n_tenors();
    let sigma_eps = params.sigma_eps(n)?;
    if loadings.n_tenors() != n {
        return dim("loadings and panel disagree on tenor count");
    }
    if z.n_dates() == 0 {
        return Err(Error::InsufficientData("filter needs at least one date".into()));
    }
    let chol = Cholesky::new(sigma_eps.clone())
        .ok_or_else(|| Error::Numerical("measurement covariance is not positive definite".into()))?;
    let lower = chol.l();
    let logdet_sigma: f64 = (0..n).map(|i| lower[(i, i)].ln()).sum::<f64>() * 2.0;
    let c = chol.solve(&loadings.matrix);
    let mt = loadings.matrix.tr_mul(&c);
    let m = Matrix3::from_fn(|i, j| 0.5 * (mt[(i, j)] + mt[(j, i)]));
    let lam = &loadings.matrix;
    let vals = z.values();

    let mut a = init.a0;
    let mut p = init.p0;
    let mut loglik = 0.0;
    let mut e = vec![0.0; n];
    let mut rows = Vec::with_capacity(n);
    for t in 0..z.n_dates() {
        let (a_pred, p_pred) = kf_predict(&a, &p, params);
        if z.mask().row(t).iter().all(|&o| o) {
            for i in 0..n {
                e[i] = vals[(t, i)]
                    - (lam[(i, 0)] * a_pred[0] + lam[(i, 1)] * a_pred[1] + lam[(i, 2)] * a_pred[2]);
            }
            let mut d = Vector3::zeros();
            for i in 0..n {
                for j in 0..3 {
                    d[j] += c[(i, j)] * e[i];
                }
            }
            // e' Sigma^{-1} e through the lower factor, in place
            let mut quad = 0.0;
            for i in 0..n {
                let mut s = e[i];
                for k in 0..i {
                    s -= lower[(i, k)] * e[k];
                }
                e[i] = s / lower[(i, i)];
                quad += e[i] * e[i];
            }
            let amat = Matrix3::identity() + p_pred * m;
            let det = amat.determinant();
            let inv = amat
                .try_inverse()
                .filter(|_| det > 0.0)
                .ok_or_else(|| Error::Numerical("singular information update".into()))?;
            let g = symmetrize3(&(inv * p_pred));
            loglik += -0.5 * (quad - d.dot(&(g * d)) + logdet_sigma + det.ln());
            a = a_pred + g * d;
            p = g;
        } else {
            rows.clear();
            rows.extend((0..n).filter(|&i| z.is_observed(t, i)));
            if rows.is_empty() {
                a = a_pred;
                p = p_pred;
                continue;
            }
            let obs = DVector::from_iterator(rows.len(), rows.iter().map(|&i| vals[(t, i)]));
            let r = restrict(&rows, lam, &sigma_eps);
            let (u, ch) = update_inner(&a_pred, &p_pred, &obs, &r.loadings, &r.sigma)?;
            loglik += loglik_term(&u.innovation, &ch);
            a = u.a;
            p = u.p;
        }
    }
    Ok(loglik)
}

/// `-1/2 sum_t (e_t' L_t^{-1} e_t + log|L_t|)` over dates with observations.
pub fn log_likelihood(output: &FilterOutput) -> Result<f64> {
    let mut total = 0.0;
    for (e, l) in output.innovations.iter().zip(&output.innovation_cov) {
        if e.is_empty() {
            continue;
        }
        let chol = Cholesky::new(l.clone())
            .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
        total += loglik_term(e, &chol);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{MaturityGrid, Month};
    use crate::nelson_siegel::loading_matrix;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(n: usize, q: usize) -> SsmParams {
        SsmParams {
            lambda: 0.0609,
            psi0: Vector3::new(0.1, -0.05, 0.02),
            psi1: Vector3::new(0.95, 0.8, 0.6),
            sigma_eta: Vector3::new(0.2, 0.3, 0.4),
            cov: CovStructure::Diag { sigma: vec![0.1; n] },
            gamma: DMatrix::zeros(n, q),
        }
    }

    fn dates(n: usize) -> Vec<Month> {
        let s = Month::new(2010, 1).unwrap();
        (0..n as i32).map(|k| s.offset(k)).collect()
    }

    #[test]
    fn rho_transform() {
        assert_eq!(rho_from_theta(0.0, 12), 0.0);
        assert_abs_diff_eq!(band_rho_bound(12), 0.504_258_126_762_492_5, epsilon = 1e-12);
        assert_abs_diff_eq!(rho_from_theta(800.0, 12), band_rho_bound(12), epsilon = 1e-15);
        assert_abs_diff_eq!(rho_from_theta(-800.0, 12), -band_rho_bound(12), epsilon = 1e-15);
        let mut prev = -1.0;
        for k in -100..100 {
            let r = rho_from_theta(k as f64 * 0.1, 12);
            assert!(r > prev);
            prev = r;
            assert_abs_diff_eq!(theta_from_rho(r, 12), k as f64 * 0.1, epsilon = 1e-9);
        }
    }

    #[test]
    fn sigma_structures() {
        let s3 = build_sigma_eps(&CovStructure::FullAr { sigma: 0.5, rho: 0.0 }, 4).unwrap();
        assert_eq!(s3, DMatrix::identity(4, 4) * 0.25);
        let s2 = build_sigma_eps(&CovStructure::Band { sigma: vec![1.0, 2.0, 3.0], theta: 0.0 }, 3).unwrap();
        assert_eq!(s2, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 9.0])));
        let s = build_sigma_eps(&CovStructure::FullAr { sigma: 2.0, rho: 0.5 }, 3).unwrap();
        assert_abs_diff_eq!(s[(0, 2)], 4.0 * 0.25);
        assert!(build_sigma_eps(&CovStructure::Diag { sigma: vec![1.0; 3] }, 4).is_err());
        assert!(build_sigma_eps(&CovStructure::Diag { sigma: vec![1.0, -1.0, 1.0] }, 3).is_err());
        assert!(build_sigma_eps(&CovStructure::FullAr { sigma: 1.0, rho: 1.0 }, 3).is_err());
    }

    #[test]
    fn band_structure_always_factorises() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let sigma: Vec<f64> = (0..12).map(|_| (rng.random_range(-4.0..2.0f64)).exp()).collect();
            let theta = rng.random_range(-30.0..30.0);
            build_sigma_eps(&CovStructure::Band { sigma, theta }, 12).unwrap();
        }
    }

    #[test]
    fn deflate_cases() {
        let grid = MaturityGrid::canonical();
        let lam = loading_matrix(&grid, 0.0609).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = DMatrix::from_fn(5, 12, |_, _| rng.random_range(0.0..4.0));
        let panel = YieldPanel::complete(dates(5), y.clone(), grid.clone()).unwrap();
        let mut p = params(12, 2);
        p.psi0 = Vector3::zeros();
        let u = FactorPanel {
            dates: dates(5),
            values: DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0)),
        };
        assert_eq!(deflate(&panel, Some(&u), &p, &lam).unwrap().values(), &y);

        p.psi0 = Vector3::new(0.2, -0.1, 0.05);
        p.gamma = DMatrix::from_fn(12, 2, |_, _| rng.random_range(-1.0..1.0));
        let exact = DMatrix::from_fn(5, 12, |r, c| {
            (lam.matrix.row(c) * p.mu())[0] + (p.gamma.row(c) * u.values.row(r).transpose())[0]
        });
        let exact_panel = YieldPanel::complete(dates(5), exact, grid.clone()).unwrap();
        let z = deflate(&exact_panel, Some(&u), &p, &lam).unwrap();
        assert!(z.values().amax() < 1e-12);

        let z = deflate(&panel, Some(&u), &p, &lam).unwrap();
        let mu = p.mu();
        for r in 0..5 {
            for c in 0..12 {
                let mut expect = y[(r, c)];
                for j in 0..3 {
                    expect -= lam.matrix[(c, j)] * mu[j];
                }
                for q in 0..2 {
                    expect -= p.gamma[(c, q)] * u.values[(r, q)];
                }
                assert_abs_diff_eq!(z.values()[(r, c)], expect, epsilon = 1e-12);
            }
        }
        let short = FactorPanel { dates: dates(4), values: DMatrix::zeros(4, 2) };
        assert!(deflate(&panel, Some(&short), &p, &lam).is_err());
    }

    #[test]
    fn predict_cases() {
        let mut p = params(4, 0);
        p.psi1 = Vector3::zeros();
        let (a, pp) = kf_predict(&Vector3::new(1.0, 2.0, 3.0), &Matrix3::identity(), &p);
        assert_eq!(a, Vector3::zeros());
        assert_abs_diff_eq!(pp, Matrix3::from_diagonal(&Vector3::new(0.04, 0.09, 0.16)), epsilon = 1e-16);

        p.psi1 = Vector3::repeat(1.0 - 1e-12);
        p.sigma_eta = Vector3::zeros();
        let a0 = Vector3::new(0.3, -0.2, 0.9);
        let (a, _) = kf_predict(&a0, &Matrix3::identity(), &p);
        assert_abs_diff_eq!(a, a0, epsilon = 1e-11);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = params(4, 0);
        let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let p_prev = g * g.transpose();
        let a_prev = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let (a, pp) = kf_predict(&a_prev, &p_prev, &p);
        let psi = Matrix3::from_diagonal(&p.psi1);
        let q = Matrix3::from_diagonal(&p.sigma_eta.component_mul(&p.sigma_eta));
        assert_abs_diff_eq!(a, psi * a_prev, epsilon = 1e-12);
        assert_abs_diff_eq!(pp, psi * p_prev * psi.transpose() + q, epsilon = 1e-12);
    }

    fn square_loadings() -> NsLoadingMatrix {
        NsLoadingMatrix {
            matrix: DMatrix::identity(3, 3),
            lambda: 0.0609,
            grid: MaturityGrid::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        }
    }

    #[test]
    fn update_limits() {
        let lam = square_loadings();
        let a = Vector3::new(0.1, 0.2, 0.3);
        let p = Matrix3::identity() * 2.0;
        let z = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let tiny = DMatrix::identity(3, 3) * 1e-14;
        let u = kf_update(&a, &p, &z, &[0, 1, 2], &lam, &tiny).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(u.a[i], z[i], epsilon = 1e-10);
        }
        let huge = DMatrix::identity(3, 3) * 1e14;
        let u = kf_update(&a, &p, &z, &[0, 1, 2], &lam, &huge).unwrap();
        assert_abs_diff_eq!(u.a, a, epsilon = 1e-12);
        assert_abs_diff_eq!(u.p, p, epsilon = 1e-12);
        let skip = kf_update(&a, &p, &DVector::zeros(0), &[], &lam, &huge).unwrap();
        assert_eq!((skip.a, skip.p), (a, p));
        assert!(skip.innovation.is_empty());
        assert!(kf_update(&a, &p, &z, &[0, 1], &lam, &huge).is_err());
    }

    #[test]
    fn update_matches_block_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lam = NsLoadingMatrix {
            matrix: DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0)),
            lambda: 0.0609,
            grid: MaturityGrid::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        };
        let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let p = g * g.transpose() + Matrix3::identity() * 0.1;
        let a = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let h = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let sig = &h * h.transpose() + DMatrix::identity(4, 4) * 0.2;
        let z = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
        let u = kf_update(&a, &p, &z, &[0, 1, 2, 3], &lam, &sig).unwrap();
        // joint (X, Z): Sxx = P, Sxz = P H', Szz = H P H' + R
        let pd = DMatrix::from_fn(3, 3, |i, j| p[(i, j)]);
        let ad = DVector::from_fn(3, |i, _| a[i]);
        let hm = &lam.matrix;
        let sxz = &pd * hm.transpose();
        let szz = hm * &pd * hm.transpose() + &sig;
        let szz_inv = szz.try_inverse().unwrap();
        let mean = &ad + &sxz * &szz_inv * (&z - hm * &ad);
        let cov = &pd - &sxz * &szz_inv * sxz.transpose();
        for i in 0..3 {
            assert_abs_diff_eq!(u.a[i], mean[i], epsilon = 1e-8);
            for j in 0..3 {
                assert_abs_diff_eq!(u.p[(i, j)], cov[(i, j)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn single_step_conjugate() {
        // grids need four tenors, so the fourth is padded and masked out
        let grid = MaturityGrid::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let lam = NsLoadingMatrix {
            matrix: DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
            lambda: 0.0609,
            grid: grid.clone(),
        };
        let mut p = params(4, 0);
        p.psi1 = Vector3::zeros();
        p.sigma_eta = Vector3::repeat(1.0);
        p.cov = CovStructure::Diag { sigma: vec![1.0; 4] };
        let mut mask = DMatrix::from_element(1, 4, true);
        mask[(0, 3)] = false;
        let z = YieldPanel::new(dates(1), DMatrix::from_row_slice(1, 4, &[2.0, -4.0, 1.0, 0.0]), mask, grid).unwrap();
        let init = FilterInit { a0: Vector3::zeros(), p0: Matrix3::zeros() };
        let out = run_filter(&z, &p, &lam, &init).unwrap();
        assert_abs_diff_eq!(out.a_filt[0], Vector3::new(1.0, -2.0, 0.5), epsilon = 1e-14);
        assert_eq!(out.innovations[0].len(), 3);
    }

    #[test]
    fn all_missing_follows_prior() {
        let grid = MaturityGrid::canonical();
        let lam = loading_matrix(&grid, 0.0609).unwrap();
        let p = params(12, 0);
        let mask = DMatrix::from_element(6, 12, false);
        let z = YieldPanel::new(dates(6), DMatrix::zeros(6, 12), mask, grid).unwrap();
        let init = FilterInit { a0: Vector3::new(1.0, -1.0, 0.5), p0: Matrix3::identity() };
        let out = run_filter(&z, &p, &lam, &init).unwrap();
        assert_eq!(out.loglik, 0.0);
        let mut a = init.a0;
        let mut pp = init.p0;
        for t in 0..6 {
            let (na, np) = kf_predict(&a, &pp, &p);
            assert_eq!(out.a_filt[t], na);
            assert_eq!(out.p_filt[t], np);
            a = na;
            pp = np;
        }
    }

    #[test]
    fn loglik_examples() {
        let one = FilterOutput {
            a_pred: vec![],
            p_pred: vec![],
            a_filt: vec![],
            p_filt: vec![],
            innovations: vec![DVector::zeros(3), DVector::from_vec(vec![1.0])],
            innovation_cov: vec![DMatrix::identity(3, 3), DMatrix::identity(1, 1)],
            obs_rows: vec![],
            loglik: 0.0,
        };
        assert_abs_diff_eq!(log_likelihood(&one).unwrap(), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn loglik_matches_density_sum_and_storage_free_pass() {
        let grid = MaturityGrid::canonical();
        let lam = loading_matrix(&grid, 0.0609).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = params(12, 0);
        p.cov = CovStructure::Band { sigma: (0..12).map(|_| rng.random_range(0.05..0.3)).collect(), theta: 0.7 };
        let mut mask = DMatrix::from_element(20, 12, true);
        for _ in 0..30 {
            mask[(rng.random_range(0..20), rng.random_range(0..12))] = false;
        }
        let z = YieldPanel::new(dates(20), DMatrix::from_fn(20, 12, |_, _| rng.random_range(-1.0..1.0)), mask, grid).unwrap();
        let init = FilterInit::stationary(&p);
        let out = run_filter(&z, &p, &lam, &init).unwrap();
        let mut dens = 0.0;
        for (e, l) in out.innovations.iter().zip(&out.innovation_cov) {
            let inv = l.clone().try_inverse().unwrap();
            dens += -0.5 * ((e.transpose() * inv * e)[0] + l.determinant().ln());
        }
        assert_abs_diff_eq!(out.loglik, dens, epsilon = 1e-10);
        assert_eq!(log_likelihood(&out).unwrap(), out.loglik);
        assert_eq!(filter_loglik(&z, &p, &lam, &init).unwrap(), out.loglik);
        for (t, rows) in out.obs_rows.iter().enumerate() {
            assert_eq!(rows.len(), (0..12).filter(|&c| z.is_observed(t, c)).count());
        }
    }

    #[test]
    fn information_form_agrees_with_reference() {
        let grid = MaturityGrid::canonical();
        let lam = loading_matrix(&grid, 0.0609).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for case in 0..60 {
            let mut p = params(12, 0);
            p.psi1 = Vector3::from_fn(|_, _| rng.random_range(-0.95..0.99));
            p.sigma_eta = Vector3::from_fn(|_, _| rng.random_range(0.01..1.0));
            let sigma: Vec<f64> = (0..12).map(|_| rng.random_range(0.01..0.5)).collect();
            p.cov = match case % 3 {
                0 => CovStructure::Diag { sigma },
                1 => CovStructure::Band { sigma, theta: rng.random_range(-4.0..4.0) },
                _ => CovStructure::FullAr { sigma: 0.2, rho: rng.random_range(-0.9..0.9) },
            };
            let mut mask = DMatrix::from_element(40, 12, true);
            for _ in 0..(case % 4) * 10 {
                mask[(rng.random_range(0..40), rng.random_range(0..12))] = false;
            }
            let z = YieldPanel::new(dates(40), DMatrix::from_fn(40, 12, |_, _| rng.random_range(-2.0..2.0)), mask, grid.clone()).unwrap();
            let init = FilterInit::stationary(&p);
            let reference = run_filter(&z, &p, &lam, &init).unwrap().loglik;
            let fast = fast_loglik(&z, &p, &lam, &init).unwrap();
            assert!((fast - reference).abs() <= 1e-9 * reference.abs().max(1.0), "{fast} vs {reference}");
        }
    }

    #[test]
    fn exact_observation_inverts_square_loadings() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let grid = MaturityGrid::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        // fourth row unobserved, leaving a square invertible 3x3 system
        let lam = NsLoadingMatrix { matrix: m.clone(), lambda: 0.0609, grid: grid.clone() };
        let mut mask = DMatrix::from_element(4, 4, true);
        for t in 0..4 {
            mask[(t, 3)] = false;
        }
        let zv = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let z = YieldPanel::new(dates(4), zv.clone(), mask, grid).unwrap();
        let mut p = params(4, 0);
        p.cov = CovStructure::Diag { sigma: vec![1e-9; 4] };
        let out = run_filter(&z, &p, &lam, &FilterInit::stationary(&p)).unwrap();
        let inv = m.rows(0, 3).into_owned().try_inverse().unwrap();
        for t in 0..4 {
            let x = &inv * zv.row(t).columns(0, 3).transpose();
            for i in 0..3 {
                assert_abs_diff_eq!(out.a_filt[t][i], x[i], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn deleting_a_tenor_equals_masking_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let grid = MaturityGrid::canonical();
        let lam = loading_matrix(&grid, 0.0609).unwrap();
        let mut p = params(12, 0);
        p.cov = CovStructure::Band { sigma: (0..12).map(|_| rng.random_range(0.05..0.3)).collect(), theta: -0.4 };
        let vals = DMatrix::from_fn(15, 12, |_, _| rng.random_range(-1.0..1.0));
        let drop = 7;
        let mut mask = DMatrix::from_element(15, 12, true);
        for t in 0..15 {
            mask[(t, drop)] = false;
        }
        let masked = YieldPanel::new(dates(15), vals.clone(), mask, grid.clone()).unwrap();
        let init = FilterInit::stationary(&p);
        let a = run_filter(&masked, &p, &lam, &init).unwrap();

        let keep: Vec<usize> = (0..12).filter(|&i| i != drop).collect();
        let small_grid = MaturityGrid::new(keep.iter().map(|&i| grid.tenors()[i]).collect()).unwrap();
        let small_lam = NsLoadingMatrix {
            matrix: lam.matrix.select_rows(&keep),
            lambda: 0.0609,
            grid: small_grid.clone(),
        };
        let sig = p.sigma_eps(12).unwrap().select_rows(&keep).select_columns(&keep);
        let small = YieldPanel::complete(dates(15), vals.select_columns(&keep), small_grid).unwrap();
        let sq = FilterInit::stationary(&p);
        let mut a_ = sq.a0;
        let mut p_ = sq.p0;
        for t in 0..15 {
            let (ap, pp) = kf_predict(&a_, &p_, &p);
            let obs = small.row(t);
            let u = kf_update(&ap, &pp, &obs, &(0..11).collect::<Vec<_>>(), &small_lam, &sig).unwrap();
            assert_eq!(u.a, a.a_filt[t]);
            assert_eq!(u.p, a.p_filt[t]);
            a_ = u.a;
            p_ = u.p;
        }
    }
}

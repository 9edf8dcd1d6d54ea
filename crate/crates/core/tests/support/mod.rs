//! Brute-force references shared by the integration and acceptance tests.
#![allow(dead_code)]

use dnsfr_core::market_data::{MaturityGrid, Month, YieldPanel};
use dnsfr_core::nelson_siegel::NsLoadingMatrix;
use dnsfr_core::state_space::{CovStructure, SsmParams};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;

pub fn months(t: usize) -> Vec<Month> {
    let start = Month::new(2000, 1).unwrap();
    (0..t).map(|i| start.offset(i as i32)).collect()
}

/// Filtered moments and log-likelihood from conditioning the stacked
/// Gaussian vector `(X_1..X_T, observed Z)` directly.
pub struct JointOracle {
    pub means: Vec<Vector3<f64>>,
    pub covs: Vec<Matrix3<f64>>,
    pub loglik: f64,
}

/// Joint covariance of the stacked states, `Cov(X_s, X_t)`.
fn state_cov(psi1: &Vector3<f64>, sigma_eta: &Vector3<f64>, p0: &Matrix3<f64>, t_len: usize) -> DMatrix<f64> {
    let phi = Matrix3::from_diagonal(psi1);
    let q = Matrix3::from_diagonal(&sigma_eta.component_mul(sigma_eta));
    let mut marg = Vec::with_capacity(t_len);
    let mut c = *p0;
    for _ in 0..t_len {
        c = phi * c * phi.transpose() + q;
        marg.push(c);
    }
    let mut out = DMatrix::zeros(3 * t_len, 3 * t_len);
    for s in 0..t_len {
        for t in s..t_len {
            let mut block = marg[s];
            for _ in s..t {
                block = phi * block;
            }
            for i in 0..3 {
                for j in 0..3 {
                    out[(3 * t + i, 3 * s + j)] = block[(i, j)];
                    out[(3 * s + j, 3 * t + i)] = block[(i, j)];
                }
            }
        }
    }
    out
}

/// Conditions on the observed cells of the first `upto` dates of `z`.
fn condition(
    z: &YieldPanel,
    lam: &DMatrix<f64>,
    sigma_eps: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    upto: usize,
) -> (DVector<f64>, DMatrix<f64>, f64) {
    let n = z.n_tenors();
    let mut cells = Vec::new();
    for t in 0..upto {
        for i in 0..n {
            if z.is_observed(t, i) {
                cells.push((t, i));
            }
        }
    }
    let m = cells.len();
    let dim = prior_mean.len();
    if m == 0 {
        return (prior_mean.clone(), prior_cov.clone(), 0.0);
    }
    let mut h = DMatrix::zeros(m, dim);
    let mut r = DMatrix::zeros(m, m);
    let mut obs = DVector::zeros(m);
    for (k, &(t, i)) in cells.iter().enumerate() {
        for j in 0..3 {
            h[(k, 3 * t + j)] = lam[(i, j)];
        }
        obs[k] = z.values()[(t, i)];
        for (l, &(s, i2)) in cells.iter().enumerate() {
            if s == t {
                r[(k, l)] = sigma_eps[(i, i2)];
            }
        }
    }
    let cov_o = &h * prior_cov * h.transpose() + r;
    let cross = prior_cov * h.transpose();
    let inv = cov_o.clone().try_inverse().expect("observation covariance is singular");
    let resid = obs - &h * prior_mean;
    let mean = prior_mean + &cross * &inv * &resid;
    let cov = prior_cov - &cross * &inv * cross.transpose();
    let quad = (resid.transpose() * &inv * &resid)[(0, 0)];
    let logdet = cov_o.determinant().ln();
    (mean, cov, -0.5 * (quad + logdet))
}

pub fn joint_oracle(z: &YieldPanel, params: &SsmParams, lam: &DMatrix<f64>, a0: &Vector3<f64>, p0: &Matrix3<f64>) -> JointOracle {
    let t_len = z.n_dates();
    let sigma_eps = params.sigma_eps(z.n_tenors()).unwrap();
    let prior_cov = state_cov(&params.psi1, &params.sigma_eta, p0, t_len);
    let mut prior_mean = DVector::zeros(3 * t_len);
    let mut a = *a0;
    for t in 0..t_len {
        a = a.component_mul(&params.psi1);
        for j in 0..3 {
            prior_mean[3 * t + j] = a[j];
        }
    }
    let mut means = Vec::with_capacity(t_len);
    let mut covs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let (m, c, _) = condition(z, lam, &sigma_eps, &prior_mean, &prior_cov, t + 1);
        means.push(Vector3::from_fn(|i, _| m[3 * t + i]));
        covs.push(Matrix3::from_fn(|i, j| c[(3 * t + i, 3 * t + j)]));
    }
    let (_, _, loglik) = condition(z, lam, &sigma_eps, &prior_mean, &prior_cov, t_len);
    JointOracle { means, covs, loglik }
}

/// Random well-conditioned model with `n` tenors; `kind` cycles the three
/// measurement structures.
pub fn random_params(rng: &mut impl Rng, n: usize, kind: usize) -> SsmParams {
    let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.5)).collect();
    let cov = match kind % 3 {
        0 => CovStructure::Diag { sigma },
        1 => CovStructure::Band { sigma, theta: rng.random_range(-3.0..3.0) },
        _ => CovStructure::FullAr { sigma: rng.random_range(0.3..1.5), rho: rng.random_range(-0.8..0.8) },
    };
    SsmParams {
        lambda: 0.0609,
        psi0: Vector3::zeros(),
        psi1: Vector3::from_fn(|_, _| rng.random_range(-0.95..0.95)),
        sigma_eta: Vector3::from_fn(|_, _| rng.random_range(0.2..1.5)),
        cov,
        gamma: DMatrix::zeros(n, 0),
    }
}

/// Random dense loadings on a dummy grid; the filter never looks at the
/// grid values.
pub fn random_loadings(rng: &mut impl Rng, n: usize) -> NsLoadingMatrix {
    NsLoadingMatrix {
        matrix: DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0)),
        lambda: 0.0609,
        grid: MaturityGrid::new((1..=n).map(|i| i as f64).collect()).unwrap(),
    }
}

/// Panel with roughly `hole_rate` of cells masked.
pub fn random_panel(rng: &mut impl Rng, t: usize, n: usize, hole_rate: f64) -> YieldPanel {
    let values = DMatrix::from_fn(t, n, |_, _| rng.random_range(-2.0..2.0));
    let mask = DMatrix::from_fn(t, n, |_, _| !rng.random_bool(hole_rate));
    let grid = MaturityGrid::new((1..=n).map(|i| i as f64).collect()).unwrap();
    YieldPanel::new(months(t), values, mask, grid).unwrap()
}

pub fn max_abs_diff3(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).abs().max()
}

/// Draws `Y_t = Lambda (X_t + mu) + Gamma U_t + eps_t` with `X_0` from the
/// stationary law.
pub fn simulate(params: &SsmParams, lam: &NsLoadingMatrix, u: Option<&DMatrix<f64>>, t: usize, rng: &mut impl Rng) -> YieldPanel {
    use rand_distr::{Distribution, StandardNormal};
    let n = lam.n_tenors();
    let mut normal = || -> f64 { StandardNormal.sample(rng) };
    let chol = nalgebra::Cholesky::new(params.sigma_eps(n).unwrap()).unwrap().l();
    let mu = params.mu();
    let sd0 = params.stationary_cov().map_diagonal(f64::sqrt);
    let mut x = Vector3::from_fn(|i, _| sd0[i] * normal());
    let mut values = DMatrix::zeros(t, n);
    for r in 0..t {
        x = x.component_mul(&params.psi1) + params.sigma_eta.map(|s| s * normal());
        let eps = &chol * DVector::from_fn(n, |_, _| normal());
        let mut y = &lam.matrix * (x + mu) + eps;
        if let Some(u) = u {
            y += &params.gamma * u.row(r).transpose();
        }
        values.set_row(r, &y.transpose());
    }
    YieldPanel::complete(months(t), values, lam.grid.clone()).unwrap()
}

/// Smooth AR(1) factor series, `T x q`.
pub fn factor_series(t: usize, q: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut u = DMatrix::zeros(t, q);
    for j in 0..q {
        let mut v = 0.0;
        for r in 0..t {
            let z: f64 = StandardNormal.sample(rng);
            v = 0.9 * v + 0.3 * z;
            u[(r, j)] = v;
        }
    }
    u
}

//! Marginal-likelihood estimation, in-sample diagnostics and the rolling
//! window study.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Error, Result};
use crate::exec::{derive_seed, Execution};
use crate::forecasting::{forecast_dns, forecast_dnsfr};
use crate::kpca::{extract_factors, grid_search_gamma, FactorPanel, GammaGrid, KernelConfig, KpcaModel};
use crate::market_data::{static_factor_series, tenor_label, MaturityGrid, Month, YieldPanel};
use crate::nelson_siegel::{loading_matrix, NsLoadingMatrix};
use crate::optim::{nelder_mead_restarting, SimplexOptions};
use crate::state_space::{
    deflate, fast_loglik, filter_loglik, run_filter, theta_from_rho, CovKind, CovStructure, FilterInit,
    FilterOutput, SsmParams,
};

/// Shape of the unconstrained parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n: usize,
    pub q: usize,
    pub kind: CovKind,
}

impl ParamLayout {
    fn cov_len(&self) -> usize {
        match self.kind {
            CovKind::Diagonal => self.n,
            CovKind::Band => self.n + 1,
            CovKind::FullAr => 2,
        }
    }

    pub fn len(&self) -> usize {
        9 + self.cov_len() + self.n * self.q
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn of(params: &SsmParams) -> Self {
        ParamLayout {
            n: params.gamma.nrows(),
            q: params.gamma.ncols(),
            kind: params.cov.kind(),
        }
    }
}

/// Unconstrained coordinates: `psi0` as is, `atanh(psi1)`, `ln sigma_eta`,
/// covariance parameters (`ln sigma`, band `theta`, `atanh rho`), then
/// `Gamma` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn pack(params: &SsmParams) -> Result<Self> {
        let layout = ParamLayout::of(params);
        if params.psi1.iter().any(|p| !(p.abs() < 1.0)) {
            return invalid("autoregressive coefficients must lie in (-1, 1)");
        }
        if params.sigma_eta.iter().any(|s| !(*s > 0.0)) {
            return invalid("state noise standard deviations must be positive to pack");
        }
        let mut v = Vec::with_capacity(layout.len());
        v.extend(params.psi0.iter());
        v.extend(params.psi1.iter().map(|p| p.atanh()));
        v.extend(params.sigma_eta.iter().map(|s| s.ln()));
        match &params.cov {
            CovStructure::Diag { sigma } => {
                if sigma.len() != layout.n {
                    return dim("measurement deviations do not match gamma rows");
                }
                v.extend(sigma.iter().map(|s| s.ln()));
            }
            CovStructure::Band { sigma, theta } => {
                if sigma.len() != layout.n {
                    return dim("measurement deviations do not match gamma rows");
                }
                v.extend(sigma.iter().map(|s| s.ln()));
                v.push(*theta);
            }
            CovStructure::FullAr { sigma, rho } => {
                v.push(sigma.ln());
                v.push(rho.atanh());
            }
        }
        for i in 0..layout.n {
            for j in 0..layout.q {
                v.push(params.gamma[(i, j)]);
            }
        }
        if v.iter().any(|x| !x.is_finite()) {
            return invalid("parameters map to non-finite coordinates");
        }
        Ok(ParamVector { layout, values: v })
    }

    pub fn unpack(&self, lambda: f64) -> Result<SsmParams> {
        let l = self.layout;
        let v = &self.values;
        if v.len() != l.len() {
            return dim(format!("expected {} coordinates, got {}", l.len(), v.len()));
        }
        let psi0 = Vector3::new(v[0], v[1], v[2]);
        let psi1 = Vector3::new(v[3].tanh(), v[4].tanh(), v[5].tanh());
        let sigma_eta = Vector3::new(v[6].exp(), v[7].exp(), v[8].exp());
        let mut k = 9;
        let cov = match l.kind {
            CovKind::Diagonal => {
                let sigma = v[k..k + l.n].iter().map(|x| x.exp()).collect();
                k += l.n;
                CovStructure::Diag { sigma }
            }
            CovKind::Band => {
                let sigma = v[k..k + l.n].iter().map(|x| x.exp()).collect();
                let theta = v[k + l.n];
                k += l.n + 1;
                CovStructure::Band { sigma, theta }
            }
            CovKind::FullAr => {
                let c = CovStructure::FullAr {
                    sigma: v[k].exp(),
                    rho: v[k + 1].tanh(),
                };
                k += 2;
                c
            }
        };
        let gamma = DMatrix::from_row_slice(l.n, l.q, &v[k..]);
        Ok(SsmParams {
            lambda,
            psi0,
            psi1,
            sigma_eta,
            cov,
            gamma,
        })
    }
}

/// Optimiser budget and multi-start settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub starts: usize,
    pub max_evals: usize,
    pub tol: f64,
    pub seed: u64,
    pub initial_step: f64,
    /// Standard deviation of the Gaussian jitter applied to the packed
    /// initial point for every start after the first.
    pub jitter: f64,
    pub exec: Execution,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            starts: 5,
            max_evals: 50_000,
            tol: 1e-8,
            seed: 0,
            initial_step: 0.1,
            jitter: 0.25,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: SsmParams,
    pub loglik: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Index of the winning start.
    pub start: usize,
    /// Best log-likelihood so far after each optimiser iteration of the
    /// winning start.
    pub trace: Vec<f64>,
    pub filter: FilterOutput,
    pub dates: Vec<Month>,
    pub grid: MaturityGrid,
}

impl FitResult {
    pub fn loadings(&self) -> Result<NsLoadingMatrix> {
        loading_matrix(&self.grid, self.params.lambda)
    }

    pub fn last_date(&self) -> Month {
        *self.dates.last().expect("fit over an empty panel")
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            cov_structure: self.params.cov.kind().index(),
            q: self.params.n_factors(),
            loglik: self.loglik,
            iterations: self.iterations,
            evaluations: self.evaluations,
            converged: self.converged,
            start: self.start,
            first_date: self.dates[0],
            last_date: self.last_date(),
            tenors: self.grid.tenors().to_vec(),
            params: self.params.clone(),
        }
    }
}

/// Serialisable view of a fit; the filter is recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub cov_structure: u8,
    pub q: usize,
    pub loglik: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub start: usize,
    pub first_date: Month,
    pub last_date: Month,
    pub tenors: Vec<f64>,
    pub params: SsmParams,
}

impl FitSummary {
    /// Rebuilds the fit by filtering `panel` at the stored parameters.
    pub fn restore(&self, panel: &YieldPanel, factors: Option<&FactorPanel>) -> Result<FitResult> {
        if panel.grid().tenors() != self.tenors.as_slice() {
            return dim("panel grid differs from the fitted grid");
        }
        if panel.dates().first() != Some(&self.first_date) || panel.dates().last() != Some(&self.last_date) {
            return invalid("panel dates differ from the fitted sample");
        }
        let loadings = loading_matrix(panel.grid(), self.params.lambda)?;
        let filter = filter_at(panel, factors, &self.params, &loadings)?;
        Ok(FitResult {
            params: self.params.clone(),
            loglik: filter.loglik,
            iterations: self.iterations,
            evaluations: self.evaluations,
            converged: self.converged,
            start: self.start,
            trace: Vec::new(),
            filter,
            dates: panel.dates().to_vec(),
            grid: panel.grid().clone(),
        })
    }
}

fn check_factors(panel: &YieldPanel, factors: Option<&FactorPanel>) -> Result<usize> {
    match factors {
        None => Ok(0),
        Some(u) => {
            if u.n_dates() != panel.n_dates() || u.dates != panel.dates() {
                return dim("factor panel dates differ from the yield panel");
            }
            if u.n_factors() == 0 {
                return invalid("factor panel has no columns");
            }
            Ok(u.n_factors())
        }
    }
}

/// Runs the filter at fixed parameters.
pub fn filter_at(
    panel: &YieldPanel,
    factors: Option<&FactorPanel>,
    params: &SsmParams,
    loadings: &NsLoadingMatrix,
) -> Result<FilterOutput> {
    params.validate()?;
    let z = deflate(panel, factors, params, loadings)?;
    run_filter(&z, params, loadings, &FilterInit::stationary(params))
}

fn fast_loglik_at(
    panel: &YieldPanel,
    factors: Option<&FactorPanel>,
    params: &SsmParams,
    loadings: &NsLoadingMatrix,
) -> Result<f64> {
    params.validate()?;
    let z = deflate(panel, factors, params, loadings)?;
    fast_loglik(&z, params, loadings, &FilterInit::stationary(params))
}

/// Log-likelihood at fixed parameters without storing the filter path.
pub fn loglik_at(
    panel: &YieldPanel,
    factors: Option<&FactorPanel>,
    params: &SsmParams,
    loadings: &NsLoadingMatrix,
) -> Result<f64> {
    params.validate()?;
    let z = deflate(panel, factors, params, loadings)?;
    filter_loglik(&z, params, loadings, &FilterInit::stationary(params))
}

fn sd_floor(x: f64) -> f64 {
    if x.is_finite() {
        x.max(1e-3)
    } else {
        0.1
    }
}

/// Starting point from per-date static fits: `psi1 = 0.9`, `psi0` from the
/// factor means, deviations from the static residuals, `Gamma = 0`.
pub fn default_init(panel: &YieldPanel, kind: CovKind, q: usize, lambda: f64) -> Result<SsmParams> {
    let loadings = loading_matrix(panel.grid(), lambda)?;
    let n = panel.n_tenors();
    let mut betas: Vec<Option<[f64; 3]>> = Vec::with_capacity(panel.n_dates());
    for r in 0..panel.n_dates() {
        let one = panel.slice(r, r + 1)?;
        betas.push(static_factor_series(&one, lambda).ok().map(|v| v[0]));
    }
    let ok: Vec<[f64; 3]> = betas.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(Error::InsufficientData(
            "no date has enough tenors for a static fit".into(),
        ));
    }
    let m = ok.len() as f64;
    let means: Vector3<f64> = Vector3::from_fn(|j, _| ok.iter().map(|b| b[j]).sum::<f64>() / m);
    let psi1 = Vector3::repeat(0.9);
    let psi0 = means * (1.0 - 0.9);

    let mut innov = [Vec::new(), Vec::new(), Vec::new()];
    for w in betas.windows(2) {
        if let (Some(a), Some(b)) = (w[0], w[1]) {
            for j in 0..3 {
                innov[j].push(b[j] - 0.9 * a[j] - psi0[j]);
            }
        }
    }
    let sigma_eta = Vector3::from_fn(|j, _| {
        let v = &innov[j];
        if v.len() < 2 {
            0.1
        } else {
            let mu = v.iter().sum::<f64>() / v.len() as f64;
            sd_floor((v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
        }
    });

    let mut sum_sq = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (r, beta) in betas.iter().enumerate() {
        let Some(b) = beta else { continue };
        for c in 0..n {
            if panel.is_observed(r, c) {
                let fit = (0..3).map(|j| loadings.matrix[(c, j)] * b[j]).sum::<f64>();
                sum_sq[c] += (panel.values()[(r, c)] - fit).powi(2);
                count[c] += 1;
            }
        }
    }
    let sigma: Vec<f64> = sum_sq
        .iter()
        .zip(&count)
        .map(|(s, &k)| if k == 0 { 0.1 } else { sd_floor((s / k as f64).sqrt()) })
        .collect();
    let cov = match kind {
        CovKind::Diagonal => CovStructure::Diag { sigma },
        CovKind::Band => CovStructure::Band { sigma, theta: theta_from_rho(0.0, n) },
        CovKind::FullAr => CovStructure::FullAr {
            sigma: sigma.iter().sum::<f64>() / n as f64,
            rho: 0.0,
        },
    };
    Ok(SsmParams {
        lambda,
        psi0,
        psi1,
        sigma_eta,
        cov,
        gamma: DMatrix::zeros(n, q),
    })
}

/// Maximises the marginal likelihood over the unconstrained coordinates.
///
/// The model is DNS when `factors` is `None` and DNS-FR otherwise. `init`
/// defaults to [`default_init`]; it is also scored exactly as given, so the
/// result is never worse than the supplied start.
pub fn fit_mle(
    panel: &YieldPanel,
    factors: Option<&FactorPanel>,
    kind: CovKind,
    lambda: f64,
    init: Option<&SsmParams>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if panel.n_dates() == 0 {
        return Err(Error::InsufficientData("empty panel".into()));
    }
    if opts.starts == 0 {
        return invalid("at least one start is required");
    }
    let q = check_factors(panel, factors)?;
    let loadings = loading_matrix(panel.grid(), lambda)?;
    let init = match init {
        Some(p) => {
            if p.cov.kind() != kind || p.gamma.shape() != (panel.n_tenors(), q) {
                return dim("initial parameters do not match the requested model");
            }
            let mut p = p.clone();
            p.lambda = lambda;
            p
        }
        None => default_init(panel, kind, q, lambda)?,
    };
    let x0 = ParamVector::pack(&init)?;
    let layout = x0.layout;
    let objective = |x: &[f64]| -> f64 {
        let v = ParamVector {
            layout,
            values: x.to_vec(),
        };
        match v.unpack(lambda).and_then(|p| fast_loglik_at(panel, factors, &p, &loadings)) {
            Ok(l) if l.is_finite() => -l,
            _ => f64::INFINITY,
        }
    };
    let simplex = SimplexOptions {
        tol: opts.tol,
        max_evals: opts.max_evals,
        initial_step: opts.initial_step,
    };
    let runs = opts.exec.map_range(opts.starts, |s| {
        let mut start = x0.values.clone();
        if s > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, s as u64));
            for v in start.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += opts.jitter * z;
            }
        }
        nelder_mead_restarting(objective, &start, &simplex)
    });

    // candidates are re-scored on the reference filter so the comparison
    // with the supplied start is exact
    let mut best: Option<(SsmParams, f64, usize)> = loglik_at(panel, factors, &init, &loadings)
        .ok()
        .filter(|l| l.is_finite())
        .map(|l| (init.clone(), l, 0));
    for (i, r) in runs.iter().enumerate() {
        if !r.f.is_finite() {
            continue;
        }
        let p = ParamVector {
            layout,
            values: r.x.clone(),
        }
        .unpack(lambda)?;
        if let Ok(l) = loglik_at(panel, factors, &p, &loadings) {
            if l.is_finite() && best.as_ref().is_none_or(|(_, bl, _)| l > *bl) {
                best = Some((p, l, i));
            }
        }
    }
    let (params, _, winner) = best.ok_or_else(|| {
        Error::Optimisation("every start produced a non-finite log-likelihood".into())
    })?;
    let filter = filter_at(panel, factors, &params, &loadings)?;
    let run = &runs[winner];
    Ok(FitResult {
        loglik: filter.loglik,
        iterations: run.iterations,
        evaluations: runs.iter().map(|r| r.evals).sum(),
        // a single date cannot identify the dynamics
        converged: run.converged && panel.n_dates() >= 2,
        start: winner,
        trace: run.trace.iter().map(|f| -f).collect(),
        filter,
        params,
        dates: panel.dates().to_vec(),
        grid: panel.grid().clone(),
    })
}

/// Which state estimate drives the in-sample fitted curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateChoice {
    #[default]
    Filtered,
    Predicted,
}

/// `Y_hat_t = Lambda (a_t + mu) + Gamma U_t`.
pub fn fitted_yields(
    fit: &FitResult,
    factors: Option<&FactorPanel>,
    loadings: &NsLoadingMatrix,
    states: StateChoice,
) -> Result<DMatrix<f64>> {
    let t = fit.filter.len();
    let n = loadings.n_tenors();
    let q = fit.params.n_factors();
    match factors {
        Some(u) if u.n_dates() != t || u.n_factors() != q => {
            return dim("factor panel does not match the fit");
        }
        None if q > 0 && fit.params.gamma.iter().any(|g| *g != 0.0) => {
            return invalid("fit has regression loadings but no factors were supplied");
        }
        _ => {}
    }
    let mu = fit.params.mu();
    let a = match states {
        StateChoice::Filtered => &fit.filter.a_filt,
        StateChoice::Predicted => &fit.filter.a_pred,
    };
    let mut out = DMatrix::zeros(t, n);
    for r in 0..t {
        let y = &loadings.matrix * (a[r] + mu);
        for c in 0..n {
            let mut v = y[c];
            if let Some(u) = factors {
                v += (fit.params.gamma.row(c) * u.values.row(r).transpose())[0];
            }
            out[(r, c)] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseTable {
    pub tenors: Vec<f64>,
    pub rmse: Vec<f64>,
    pub mean: f64,
}

impl RmseTable {
    /// One row per tenor plus a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tenor,rmse\n");
        for (t, r) in self.tenors.iter().zip(&self.rmse) {
            let _ = writeln!(s, "{},{}", tenor_label(*t), r);
        }
        let _ = writeln!(s, "mean,{}", self.mean);
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Per-tenor RMSE over recorded cells and their unweighted mean.
pub fn rmse_table(actual: &YieldPanel, fitted: &DMatrix<f64>) -> Result<RmseTable> {
    if fitted.shape() != (actual.n_dates(), actual.n_tenors()) {
        return dim(format!(
            "fitted is {:?}, panel is {}x{}",
            fitted.shape(),
            actual.n_dates(),
            actual.n_tenors()
        ));
    }
    let mut rmse = Vec::with_capacity(actual.n_tenors());
    for c in 0..actual.n_tenors() {
        let mut sum = 0.0;
        let mut k = 0usize;
        for r in 0..actual.n_dates() {
            if actual.is_observed(r, c) {
                sum += (actual.values()[(r, c)] - fitted[(r, c)]).powi(2);
                k += 1;
            }
        }
        if k == 0 {
            return Err(Error::InsufficientData(format!(
                "tenor {} has no observations",
                actual.grid().tenors()[c]
            )));
        }
        rmse.push((sum / k as f64).sqrt());
    }
    let mean = rmse.iter().sum::<f64>() / rmse.len() as f64;
    Ok(RmseTable {
        tenors: actual.grid().tenors().to_vec(),
        rmse,
        mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaChoice {
    Fixed(f64),
    /// Fresh grid search inside every window.
    Search(GammaGrid),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window: usize,
    pub horizon: usize,
    pub q: usize,
    pub kind: CovKind,
    pub lambda: f64,
    pub gamma: GammaChoice,
    pub fit: FitOptions,
    pub exec: Execution,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window: 60,
            horizon: 12,
            q: 3,
            kind: CovKind::Band,
            lambda: crate::nelson_siegel::DEFAULT_LAMBDA,
            gamma: GammaChoice::Search(GammaGrid::default()),
            fit: FitOptions::default(),
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    /// Date at the window midpoint.
    pub date: Month,
    pub gamma: f64,
    pub dns_in: f64,
    pub dns_out: f64,
    pub dnsfr_in: f64,
    pub dnsfr_out: f64,
}

/// Number of window positions for a panel of `t` dates.
pub fn window_count(t: usize, window: usize, horizon: usize) -> usize {
    (t + 1).saturating_sub(window + horizon)
}

fn one_window(response: &YieldPanel, reference: &YieldPanel, cfg: &WindowConfig, s: usize) -> Result<WindowRow> {
    let (w, h) = (cfg.window, cfg.horizon);
    let resp_in = response.slice(s, s + w)?;
    let ref_in = reference.slice(s, s + w)?;
    let resp_out = response.slice(s + w, s + w + h)?;
    let loadings = loading_matrix(response.grid(), cfg.lambda)?;

    let dns = fit_mle(&resp_in, None, cfg.kind, cfg.lambda, None, &cfg.fit)?;
    let gamma = match cfg.gamma {
        GammaChoice::Fixed(g) => g,
        GammaChoice::Search(grid) => grid_search_gamma(&ref_in, cfg.q, &grid, Execution::Sequential)?.gamma,
    };
    let kpca = KpcaModel::train(&ref_in, KernelConfig::new(gamma)?, cfg.q)?;
    let u = extract_factors(&kpca, &ref_in)?;
    let ref_fit = fit_mle(&ref_in, None, cfg.kind, cfg.lambda, None, &cfg.fit)?;
    let mut start = dns.params.clone();
    start.gamma = DMatrix::zeros(response.n_tenors(), cfg.q);
    let fr = fit_mle(&resp_in, Some(&u), cfg.kind, cfg.lambda, Some(&start), &cfg.fit)?;

    let dns_in = rmse_table(&resp_in, &fitted_yields(&dns, None, &loadings, StateChoice::Filtered)?)?.mean;
    let dnsfr_in = rmse_table(&resp_in, &fitted_yields(&fr, Some(&u), &loadings, StateChoice::Filtered)?)?.mean;
    let f_dns = forecast_dns(&dns, h)?;
    let f_fr = forecast_dnsfr(&fr, &ref_fit, &kpca, &ref_in, h)?;
    Ok(WindowRow {
        date: response.dates()[s + w / 2],
        gamma,
        dns_in,
        dns_out: rmse_table(&resp_out, &f_dns.yields)?.mean,
        dnsfr_in,
        dnsfr_out: rmse_table(&resp_out, &f_fr.response.yields)?.mean,
    })
}

/// Slides a `window`-month sample forward one month at a time, fitting both
/// models and scoring the next `horizon` months out of sample.
pub fn moving_window(response: &YieldPanel, reference: &YieldPanel, cfg: &WindowConfig) -> Result<Vec<WindowRow>> {
    if response.dates() != reference.dates() {
        return dim("response and reference panels must share dates");
    }
    if cfg.window < 2 || cfg.horizon == 0 || cfg.q == 0 {
        return invalid("window needs at least 2 dates, horizon and q at least 1");
    }
    let count = window_count(response.n_dates(), cfg.window, cfg.horizon);
    if count == 0 {
        return Err(Error::InsufficientData(format!(
            "{} dates cannot hold a {}-month window plus {}-month horizon",
            response.n_dates(),
            cfg.window,
            cfg.horizon
        )));
    }
    cfg.exec
        .map_range(count, |s| one_window(response, reference, cfg, s))
        .into_iter()
        .collect()
}

pub fn window_csv(rows: &[WindowRow]) -> String {
    let mut s = String::from("date,gamma,dns_in,dns_out,dnsfr_in,dnsfr_out\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.date, r.gamma, r.dns_in, r.dns_out, r.dnsfr_in, r.dnsfr_out
        );
    }
    s
}

//! h-step-ahead forecasts for DNS and the three-step DNS-FR procedure.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::Serialize;

use crate::error::{dim, invalid, Error, Result};
use crate::estimation::FitResult;
use crate::kpca::{extract_factors, matrix_rows, FactorPanel, KpcaModel};
use crate::market_data::{tenor_label, MaturityGrid, Month, YieldPanel};
use crate::state_space::{kf_predict, SsmParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub origin: Month,
    pub dates: Vec<Month>,
    pub grid: MaturityGrid,
    /// h x N point forecasts.
    pub yields: DMatrix<f64>,
    /// Per-step N x N forecast covariance.
    pub covariances: Vec<DMatrix<f64>>,
    pub state_means: Vec<Vector3<f64>>,
    pub state_covs: Vec<Matrix3<f64>>,
    /// Set when the kernel basis refit changed the order of the components.
    pub basis_reordered: bool,
}

impl ForecastResult {
    pub fn horizon(&self) -> usize {
        self.dates.len()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,date");
        for t in self.grid.tenors() {
            let _ = write!(s, ",{}", tenor_label(*t));
        }
        s.push('\n');
        for (k, d) in self.dates.iter().enumerate() {
            let _ = write!(s, "{},{}", k + 1, d);
            for v in self.yields.row(k).iter() {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn covariance_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Step {
            step: usize,
            date: Month,
            covariance: Vec<Vec<f64>>,
        }
        let steps: Vec<Step> = self
            .dates
            .iter()
            .zip(&self.covariances)
            .enumerate()
            .map(|(k, (d, c))| Step {
                step: k + 1,
                date: *d,
                covariance: matrix_rows(c),
            })
            .collect();
        serde_json::json!({
            "tenors": self.grid.tenors(),
            "basis_reordered": self.basis_reordered,
            "steps": steps,
        })
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        let json = serde_json::to_string_pretty(&self.covariance_json())
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        std::fs::write(json_path, json + "\n").map_err(|e| Error::io(json_path, e))
    }
}

/// State means `diag(psi1)^k a_N` and covariances from the prediction
/// recursion, `k = 1..=h`.
pub fn forecast_states(
    a_n: &Vector3<f64>,
    p_n: &Matrix3<f64>,
    params: &SsmParams,
    h: usize,
) -> Result<(Vec<Vector3<f64>>, Vec<Matrix3<f64>>)> {
    if h == 0 {
        return invalid("forecast horizon must be at least 1");
    }
    let mut means = Vec::with_capacity(h);
    let mut covs = Vec::with_capacity(h);
    let (mut a, mut p) = (*a_n, *p_n);
    for _ in 0..h {
        (a, p) = kf_predict(&a, &p, params);
        means.push(a);
        covs.push(p);
    }
    Ok((means, covs))
}

/// `yields_k = Lambda (mean_k + mu)`, `cov_k = Lambda C_k Lambda' + Sigma_eps`.
pub fn forecast_dns(fit: &FitResult, h: usize) -> Result<ForecastResult> {
    let a_n = fit
        .filter
        .a_filt
        .last()
        .ok_or_else(|| Error::InsufficientData("fit has no filtered states".into()))?;
    let p_n = fit.filter.p_filt.last().expect("paired with a_filt");
    let (means, covs) = forecast_states(a_n, p_n, &fit.params, h)?;
    let lam = fit.loadings()?;
    let n = lam.n_tenors();
    let sigma_eps = fit.params.sigma_eps(n)?;
    let mu = fit.params.mu();
    let mut yields = DMatrix::zeros(h, n);
    let mut covariances = Vec::with_capacity(h);
    for k in 0..h {
        let y = &lam.matrix * (means[k] + mu);
        yields.set_row(k, &y.transpose());
        let c = DMatrix::from_fn(3, 3, |i, j| covs[k][(i, j)]);
        let full = &lam.matrix * c * lam.matrix.transpose() + &sigma_eps;
        covariances.push((&full + full.transpose()) * 0.5);
    }
    let origin = fit.last_date();
    Ok(ForecastResult {
        origin,
        dates: (1..=h as i32).map(|k| origin.offset(k)).collect(),
        grid: fit.grid.clone(),
        yields,
        covariances,
        state_means: means,
        state_covs: covs,
        basis_reordered: false,
    })
}

/// Everything produced by the three DNS-FR forecasting steps.
#[derive(Debug, Clone)]
pub struct DnsfrForecast {
    pub response: ForecastResult,
    pub reference: ForecastResult,
    /// Factors re-extracted over the in-sample and forecast dates.
    pub factors: FactorPanel,
    /// Kernel model refitted on the augmented reference panel.
    pub model: KpcaModel,
}

/// True when some refitted component matches a different in-sample component
/// better than its own slot.
fn order_changed(old: &DMatrix<f64>, new: &DMatrix<f64>) -> bool {
    (0..old.ncols()).any(|j| {
        let overlaps: Vec<f64> = (0..new.ncols())
            .map(|k| old.column(j).dot(&new.column(k)).abs())
            .collect();
        let best = overlaps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k);
        best != Some(j)
    })
}

/// Step 1 forecasts the reference curve with its own DNS fit; step 2 refits
/// the kernel basis on the reference panel extended by that forecast with
/// gamma unchanged and re-extracts the factors; step 3 adds `Gamma U_hat` to
/// the response DNS forecast.
pub fn forecast_dnsfr(
    response_fit: &FitResult,
    reference_fit: &FitResult,
    kpca: &KpcaModel,
    reference_panel: &YieldPanel,
    h: usize,
) -> Result<DnsfrForecast> {
    let q = response_fit.params.n_factors();
    if q != kpca.n_components() {
        return dim(format!(
            "response fit has {q} regression columns, kernel model has {}",
            kpca.n_components()
        ));
    }
    if reference_panel.dates() != response_fit.dates.as_slice() {
        return dim("reference panel dates differ from the response sample");
    }
    if reference_fit.grid != *reference_panel.grid() {
        return dim("reference fit and panel grids differ");
    }
    let reference = forecast_dns(reference_fit, h)?;
    let augmented = reference_panel.append_rows(&reference.yields)?;
    let model = KpcaModel::train(&augmented, kpca.config, q)?;
    let factors = extract_factors(&model, &augmented)?;
    let mut response = forecast_dns(response_fit, h)?;
    let t = reference_panel.n_dates();
    let gamma = &response_fit.params.gamma;
    for k in 0..h {
        let u = factors.values.row(t + k).transpose();
        let shift = gamma * u;
        for c in 0..response.yields.ncols() {
            response.yields[(k, c)] += shift[c];
        }
    }
    response.basis_reordered = order_changed(&kpca.spectrum.z, &model.spectrum.z);
    Ok(DnsfrForecast {
        response,
        reference,
        factors,
        model,
    })
}

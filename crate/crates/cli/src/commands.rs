use std::fmt::Write as _;

use dnsfr_core::estimation::{
    fit_mle, fitted_yields, moving_window, rmse_table, window_csv, FitResult, FitSummary, StateChoice, WindowConfig,
};
use dnsfr_core::forecasting::{forecast_dns, forecast_dnsfr, ForecastResult};
use dnsfr_core::kpca::{
    extract_factors, grid_search_gamma, reconstruct_functional_coefficients, FactorPanel, KernelConfig, KpcaDump,
    KpcaModel,
};
use dnsfr_core::market_data::{
    interpolate_missing, load_yield_csv, match_maturities, tenor_label, yield_csv_string, MaturityGrid, Month,
    YieldPanel,
};
use dnsfr_core::nelson_siegel::loading_matrix;
use dnsfr_core::portfolio::{load_market_csv, simulate_ladder};
use dnsfr_core::stress::{run_suite, scenario_catalog, spec_tenor_labels, StressConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{Model, RunConfig};
use crate::error::CliError;
use crate::output::OutDir;

const REFERENCE_PANEL: &str = "panels/reference.csv";
const RESPONSE_PANEL: &str = "panels/response.csv";

/// Everything needed to rebuild a fit without re-estimating it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitArtifact {
    pub model: String,
    pub cov: u8,
    pub q: usize,
    pub gamma: Option<f64>,
    /// Log-likelihood of the DNS optimum used as the DNS-FR start.
    pub dns_start_loglik: Option<f64>,
    pub response: FitSummary,
    pub reference: Option<FitSummary>,
}

fn stem(cfg: &RunConfig) -> Result<String, CliError> {
    let k = cfg.cov()?.index();
    Ok(match cfg.model()? {
        Model::Dns => format!("dns_cov{k}"),
        Model::Dnsfr => format!("dnsfr_cov{k}_q{}", cfg.model_q()?),
    })
}

struct Panels {
    reference: YieldPanel,
    response: YieldPanel,
}

fn load_panels(out: &mut OutDir) -> Result<Panels, CliError> {
    let mut read = |rel: &str| -> Result<YieldPanel, CliError> {
        let p = out.path(rel);
        if !p.exists() {
            return Err(CliError::Missing(format!("{} not found; run `dnsfr prepare` first", p.display())));
        }
        out.record_input(&p)?;
        Ok(load_yield_csv(&p)?)
    };
    let reference = read(REFERENCE_PANEL)?;
    let response = read(RESPONSE_PANEL)?;
    if reference.dates() != response.dates() {
        return Err(CliError::Config("prepared panels cover different dates".into()));
    }
    Ok(Panels { reference, response })
}

fn in_sample(p: &YieldPanel, end: Option<Month>) -> Result<YieldPanel, CliError> {
    Ok(match end {
        Some(e) => p.until(e)?,
        None => p.clone(),
    })
}

fn factors_csv(u: &FactorPanel) -> String {
    let mut s = String::from("date");
    for j in 0..u.n_factors() {
        let _ = write!(s, ",u{}", j + 1);
    }
    s.push('\n');
    for (r, d) in u.dates.iter().enumerate() {
        let _ = write!(s, "{d}");
        for v in u.values.row(r).iter() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn coefficients_csv(grid: &MaturityGrid, table: &DMatrix<f64>) -> String {
    let mut s = String::from("tenor");
    for t in grid.tenors() {
        let _ = write!(s, ",{}", tenor_label(*t));
    }
    s.push('\n');
    for (i, t) in grid.tenors().iter().enumerate() {
        s.push_str(&tenor_label(*t));
        for v in table.row(i).iter() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn prepare(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = OutDir::open(&cfg.out, cfg.force)?;
    let lambda = cfg.lambda()?;
    let canonical = MaturityGrid::canonical();
    let mut quality = serde_json::Map::new();
    let mut prepared = Vec::new();
    for (role, key) in [("reference", "reference"), ("response", "response")] {
        let path = cfg.path(key)?;
        out.record_input(&path)?;
        let raw = load_yield_csv(&path)?;
        let missing: serde_json::Map<String, serde_json::Value> = raw
            .grid()
            .tenors()
            .iter()
            .zip(raw.missing_counts())
            .map(|(t, m)| (tenor_label(*t), m.into()))
            .collect();
        let synthesised: Vec<String> = canonical
            .tenors()
            .iter()
            .filter(|t| raw.grid().position(**t).is_none())
            .map(|t| tenor_label(*t))
            .collect();
        let filled = interpolate_missing(&raw)?;
        let matched = match_maturities(&filled, &canonical, lambda)?;
        quality.insert(
            role.into(),
            serde_json::json!({
                "source": path.to_string_lossy(),
                "dates": raw.n_dates(),
                "first": raw.dates()[0],
                "last": raw.dates()[raw.n_dates() - 1],
                "holes": raw.missing_counts().iter().sum::<usize>(),
                "missing_by_tenor": missing,
                "synthesised_tenors": synthesised,
            }),
        );
        prepared.push(matched);
    }
    let (r, s) = (&prepared[0], &prepared[1]);
    let first = r.dates()[0].max(s.dates()[0]);
    let last = (*r.dates().last().unwrap()).min(*s.dates().last().unwrap());
    if first > last {
        return Err(CliError::Config("reference and response files share no dates".into()));
    }
    let clip = |p: &YieldPanel| -> Result<YieldPanel, CliError> {
        let a = p.position_of(first).expect("inside range");
        let b = p.position_of(last).expect("inside range");
        Ok(p.slice(a, b + 1)?)
    };
    let (r, s) = (clip(r)?, clip(s)?);
    quality.insert("aligned".into(), serde_json::json!({ "first": first, "last": last, "dates": r.n_dates() }));
    out.write(REFERENCE_PANEL, yield_csv_string(&r).as_bytes())?;
    out.write(RESPONSE_PANEL, yield_csv_string(&s).as_bytes())?;
    out.write_json("panels/quality.json", &quality)?;
    out.finish("prepare", "prepare", cfg)
}

pub fn fit(cfg: &mut RunConfig) -> Result<(), CliError> {
    cfg.ensure_seed()?;
    let mut out = OutDir::open(&cfg.out, cfg.force)?;
    let panels = load_panels(&mut out)?;
    let end = cfg.in_sample_end()?;
    let reference = in_sample(&panels.reference, end)?;
    let response = in_sample(&panels.response, end)?;
    let (kind, lambda, opts) = (cfg.cov()?, cfg.lambda()?, cfg.fit_options()?);
    let name = stem(cfg)?;
    let loadings = loading_matrix(response.grid(), lambda)?;

    let dns = fit_mle(&response, None, kind, lambda, None, &opts)?;
    let (fit, factors, artifact) = match cfg.model()? {
        Model::Dns => {
            let artifact = FitArtifact {
                model: Model::Dns.name().into(),
                cov: kind.index(),
                q: 0,
                gamma: None,
                dns_start_loglik: None,
                response: dns.summary(),
                reference: None,
            };
            (dns, None, artifact)
        }
        Model::Dnsfr => {
            let q = cfg.model_q()?;
            let search = grid_search_gamma(&reference, q, &cfg.gamma_grid()?, opts.exec)?;
            let kpca = KpcaModel::train(&reference, KernelConfig::new(search.gamma)?, q)?;
            let u = extract_factors(&kpca, &reference)?;
            let reference_fit = fit_mle(&reference, None, kind, lambda, None, &opts)?;
            let mut start = dns.params.clone();
            start.gamma = DMatrix::zeros(response.n_tenors(), q);
            let fr = fit_mle(&response, Some(&u), kind, lambda, Some(&start), &opts)?;
            out.write_json(&format!("fits/{name}_kpca.json"), &KpcaDump::from(&kpca))?;
            out.write(&format!("fits/{name}_factors.csv"), factors_csv(&u).as_bytes())?;
            let coef = reconstruct_functional_coefficients(&fr.params.gamma, &kpca)?;
            out.write(
                &format!("fits/{name}_coefficients.csv"),
                coefficients_csv(response.grid(), &coef).as_bytes(),
            )?;
            let artifact = FitArtifact {
                model: Model::Dnsfr.name().into(),
                cov: kind.index(),
                q,
                gamma: Some(search.gamma),
                dns_start_loglik: Some(dns.loglik),
                response: fr.summary(),
                reference: Some(reference_fit.summary()),
            };
            (fr, Some(u), artifact)
        }
    };
    let fitted = fitted_yields(&fit, factors.as_ref(), &loadings, StateChoice::Filtered)?;
    let rmse = rmse_table(&response, &fitted)?;
    let fitted_panel = YieldPanel::complete(response.dates().to_vec(), fitted, response.grid().clone())?;
    out.write_json(&format!("fits/{name}.json"), &artifact)?;
    out.write(&format!("fits/{name}_rmse.csv"), rmse.to_csv().as_bytes())?;
    out.write(&format!("fits/{name}_fitted.csv"), yield_csv_string(&fitted_panel).as_bytes())?;
    out.finish(&format!("fit_{name}"), "fit", cfg)
}

struct Restored {
    response_fit: FitResult,
    reference_fit: Option<FitResult>,
    kpca: Option<KpcaModel>,
    reference: YieldPanel,
    response: YieldPanel,
}

fn restore(cfg: &RunConfig, out: &mut OutDir, panels: &Panels) -> Result<Restored, CliError> {
    let name = stem(cfg)?;
    let path = out.path(&format!("fits/{name}.json"));
    if !path.exists() {
        return Err(CliError::Missing(format!("{} not found; run `dnsfr fit` first", path.display())));
    }
    out.record_input(&path)?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(path.clone(), e))?;
    let artifact: FitArtifact =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let end = Some(artifact.response.last_date);
    let reference = in_sample(&panels.reference, end)?;
    let response = in_sample(&panels.response, end)?;
    let (response_fit, reference_fit, kpca) = match artifact.gamma {
        None => (artifact.response.restore(&response, None)?, None, None),
        Some(g) => {
            let kpca = KpcaModel::train(&reference, KernelConfig::new(g)?, artifact.q)?;
            let u = extract_factors(&kpca, &reference)?;
            let ref_summary = artifact
                .reference
                .as_ref()
                .ok_or_else(|| CliError::Config(format!("{}: DNS-FR fit lacks the reference fit", path.display())))?;
            (
                artifact.response.restore(&response, Some(&u))?,
                Some(ref_summary.restore(&reference, None)?),
                Some(kpca),
            )
        }
    };
    Ok(Restored {
        response_fit,
        reference_fit,
        kpca,
        reference,
        response,
    })
}

fn forecast_of(r: &Restored, h: usize) -> Result<ForecastResult, CliError> {
    Ok(match (&r.reference_fit, &r.kpca) {
        (Some(rf), Some(k)) => forecast_dnsfr(&r.response_fit, rf, k, &r.reference, h)?.response,
        _ => forecast_dns(&r.response_fit, h)?,
    })
}

pub fn forecast(cfg: &RunConfig) -> Result<(), CliError> {
    let mut out = OutDir::open(&cfg.out, cfg.force)?;
    let panels = load_panels(&mut out)?;
    let restored = restore(cfg, &mut out, &panels)?;
    let h = cfg.horizon()?;
    let f = forecast_of(&restored, h)?;
    let name = format!("{}_h{h}", stem(cfg)?);
    out.write(&format!("forecasts/{name}.csv"), f.to_csv().as_bytes())?;
    out.write_json(&format!("forecasts/{name}_cov.json"), &f.covariance_json())?;
    // score against realised data when the panel extends past the sample
    let t0 = restored.response.n_dates();
    let available = panels.response.n_dates().saturating_sub(t0).min(h);
    if available > 0 {
        let actual = panels.response.slice(t0, t0 + available)?;
        let predicted = f.yields.rows(0, available).into_owned();
        let rmse = rmse_table(&actual, &predicted)?;
        out.write(&format!("forecasts/{name}_rmse.csv"), rmse.to_csv().as_bytes())?;
    }
    out.finish(&format!("forecast_{name}"), "forecast", cfg)
}

fn selected_cases(cfg: &RunConfig) -> Result<Vec<(usize, dnsfr_core::stress::ShockSpec)>, CliError> {
    let catalog = scenario_catalog();
    let wanted = cfg.raw("cases").unwrap_or("all");
    if wanted == "all" {
        return Ok(catalog.into_iter().enumerate().collect());
    }
    let mut picked = Vec::new();
    for name in wanted.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let i = catalog
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| CliError::Config(format!("unknown stress case {name}")))?;
        if !picked.iter().any(|(j, _)| *j == i) {
            picked.push((i, catalog[i].clone()));
        }
    }
    if picked.is_empty() {
        return Err(CliError::Config("no stress cases selected".into()));
    }
    Ok(picked)
}

pub fn stress(cfg: &mut RunConfig) -> Result<(), CliError> {
    let seed = cfg.ensure_seed()?;
    let mut out = OutDir::open(&cfg.out, cfg.force)?;
    let panels = load_panels(&mut out)?;
    let end = cfg.in_sample_end()?;
    let reference = in_sample(&panels.reference, end)?;
    let response = in_sample(&panels.response, end)?;
    let cases = selected_cases(cfg)?;
    let q = cfg.q()?;
    if q == 0 {
        return Err(CliError::Config("stress runs DNS-FR and needs q >= 1".into()));
    }
    let scfg = StressConfig {
        q,
        kind: cfg.cov()?,
        lambda: cfg.lambda()?,
        gamma_grid: cfg.gamma_grid()?,
        fit: cfg.fit_options()?,
        band_samples: cfg.uint("band_samples")?,
        level: cfg.float("level")?,
        seed,
        refit_response: cfg.refit_response()?,
        exec: cfg.exec()?,
    };
    let (baseline, results) = run_suite(&cases, &reference, &response, &scfg)?;
    let mut summary = Vec::new();
    for r in &results {
        out.write(&format!("stress/case_{}.csv", r.spec.name), r.diff.to_csv().as_bytes())?;
        summary.push(serde_json::json!({
            "case": r.spec.name,
            "start": r.spec.start,
            "end": r.spec.end,
            "tenors": spec_tenor_labels(&r.spec),
            "multiplier": r.spec.multiplier,
            "gamma": r.gamma,
            "band_seed": r.band_seed,
            "loglik": r.shocked.fit.loglik,
        }));
    }
    out.write_json(
        "stress/summary.json",
        &serde_json::json!({
            "baseline": { "gamma": baseline.gamma, "loglik": baseline.fit.loglik },
            "refit_response": scfg.refit_response,
            "band_samples": scfg.band_samples,
            "cases": summary,
        }),
    )?;
    out.finish("stress", "stress", cfg)
}

pub fn ladder(cfg: &mut RunConfig) -> Result<(), CliError> {
    let seed = cfg.ensure_seed()?;
    let mut out = OutDir::open(&cfg.out, cfg.force)?;
    let panels = load_panels(&mut out)?;
    let restored = restore(cfg, &mut out, &panels)?;
    let lc = cfg.ladder()?;
    let h = cfg.horizon()?.max(lc.investments.saturating_sub(1)).max(1);
    let f = forecast_of(&restored, h)?;
    let market_path = cfg.path("market")?;
    out.record_input(&market_path)?;
    let market = load_market_csv(&market_path)?.starting_at(f.origin)?;
    let last = restored.response.n_dates() - 1;
    let initial: Vec<f64> = restored.response.row(last).iter().copied().collect();
    let path = simulate_ladder(&lc, &market, &f, &initial, cfg.uint("paths")?, seed, cfg.exec()?)?;
    let name = format!("{}_tenor{}", stem(cfg)?, lc.bond_tenor);
    out.write(&format!("ladder/{name}.csv"), path.to_csv().as_bytes())?;
    out.finish(&format!("ladder_{name}"), "ladder", cfg)
}

pub fn window(cfg: &mut RunConfig) -> Result<(), CliError> {
    cfg.ensure_seed()?;
    let mut out = OutDir::open(&cfg.out, cfg.force)?;
    let panels = load_panels(&mut out)?;
    let q = cfg.q()?;
    if q == 0 {
        return Err(CliError::Config("the window study compares against DNS-FR and needs q >= 1".into()));
    }
    let wc = WindowConfig {
        window: cfg.uint("window")?,
        horizon: cfg.horizon()?,
        q,
        kind: cfg.cov()?,
        lambda: cfg.lambda()?,
        gamma: cfg.window_gamma()?,
        fit: cfg.fit_options()?,
        exec: cfg.exec()?,
    };
    let rows = moving_window(&panels.response, &panels.reference, &wc)?;
    let name = format!("window_w{}_h{}_cov{}", wc.window, wc.horizon, wc.kind.index());
    out.write(&format!("window/{name}.csv"), window_csv(&rows).as_bytes())?;
    out.finish(&name, "window", cfg)
}

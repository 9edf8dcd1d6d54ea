//! Shock scenarios on the reference curve and their effect on the fitted
//! response curve.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Error, Result};
use crate::estimation::{filter_at, fit_mle, fitted_yields, FitOptions, FitResult, StateChoice};
use crate::exec::{derive_seed, Execution};
use crate::kpca::{extract_factors, grid_search_gamma, FactorPanel, GammaGrid, KernelConfig, KpcaModel};
use crate::market_data::{tenor_label, Month, YieldPanel};
use crate::nelson_siegel::{loading_matrix, NsLoadingMatrix};
use crate::state_space::CovKind;
use crate::stats::{cov_sqrt, quantiles};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockSpec {
    pub name: String,
    pub start: Month,
    /// `None` keeps the shock in force to the end of the sample.
    pub end: Option<Month>,
    pub tenors: Vec<f64>,
    pub multiplier: f64,
}

impl ShockSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(end) = self.end {
            if end < self.start {
                return invalid(format!("shock {} ends before it starts", self.name));
            }
        }
        if self.tenors.is_empty() {
            return invalid(format!("shock {} has no tenors", self.name));
        }
        if !(self.multiplier > 0.0) || !self.multiplier.is_finite() {
            return invalid(format!("shock {} multiplier must be positive", self.name));
        }
        Ok(())
    }

    pub fn covers(&self, date: Month) -> bool {
        date >= self.start && self.end.is_none_or(|e| date <= e)
    }

    pub fn with_multiplier(&self, multiplier: f64) -> Self {
        ShockSpec {
            multiplier,
            ..self.clone()
        }
    }
}

/// Scales the covered cells; the mask is left as is.
pub fn apply_shock(panel: &YieldPanel, spec: &ShockSpec) -> Result<YieldPanel> {
    spec.validate()?;
    let cols: Vec<usize> = spec
        .tenors
        .iter()
        .map(|&t| {
            panel
                .grid()
                .position(t)
                .ok_or_else(|| Error::InvalidInput(format!("tenor {t} is not on the panel grid")))
        })
        .collect::<Result<_>>()?;
    let mut v = panel.values().clone();
    for (r, d) in panel.dates().iter().enumerate() {
        if spec.covers(*d) {
            for &c in &cols {
                if panel.is_observed(r, c) {
                    v[(r, c)] *= spec.multiplier;
                }
            }
        }
    }
    panel.with_values(v)
}

pub const SHORT_END: [f64; 8] = [1.0, 3.0, 6.0, 9.0, 12.0, 24.0, 36.0, 60.0];
pub const MIDDLE: [f64; 2] = [84.0, 120.0];
pub const LONG_END: [f64; 2] = [240.0, 360.0];

/// The eight standard cases: `1.x` hold through 2015, `2.x` persist from
/// January 2015. `x` runs over short end, middle, long end and whole curve.
pub fn scenario_catalog() -> Vec<ShockSpec> {
    let start = Month::new(2015, 1).expect("valid month");
    let end = Month::new(2015, 12).expect("valid month");
    let sets: [Vec<f64>; 4] = [
        SHORT_END.to_vec(),
        MIDDLE.to_vec(),
        LONG_END.to_vec(),
        crate::market_data::MaturityGrid::CANONICAL.to_vec(),
    ];
    let mut out = Vec::with_capacity(8);
    for (scenario, window_end) in [(1, Some(end)), (2, None)] {
        for (k, tenors) in sets.iter().enumerate() {
            out.push(ShockSpec {
                name: format!("{scenario}.{}", k + 1),
                start,
                end: window_end,
                tenors: tenors.clone(),
                multiplier: 2.0,
            });
        }
    }
    out
}

/// Maturity buckets in months: `(0, 60]`, `(60, 120]`, `(120, 360]`.
pub const BUCKETS: [(&str, f64, f64); 3] = [("short", 0.0, 60.0), ("middle", 60.0, 120.0), ("long", 120.0, 360.0)];

fn bucket_columns(tenors: &[f64]) -> Result<[Vec<usize>; 3]> {
    let mut cols: [Vec<usize>; 3] = Default::default();
    for (b, (_, lo, hi)) in BUCKETS.iter().enumerate() {
        cols[b] = (0..tenors.len()).filter(|&i| tenors[i] > *lo && tenors[i] <= *hi).collect();
        if cols[b].is_empty() {
            return invalid(format!("no tenor falls in the {} bucket", BUCKETS[b].0));
        }
    }
    Ok(cols)
}

fn bucket_means(diff: &DVector<f64>, cols: &[Vec<usize>; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (b, c) in cols.iter().enumerate() {
        out[b] = c.iter().map(|&i| diff[i]).sum::<f64>() / c.len() as f64;
    }
    out
}

/// Per-date bucket means of a shocked-minus-baseline difference, with bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketDiff {
    pub dates: Vec<Month>,
    pub mean: Vec<[f64; 3]>,
    pub lo: Vec<[f64; 3]>,
    pub hi: Vec<[f64; 3]>,
}

impl BucketDiff {
    pub fn is_zero(&self) -> bool {
        [&self.mean, &self.lo, &self.hi]
            .iter()
            .all(|s| s.iter().all(|r| r.iter().all(|v| *v == 0.0)))
    }

    /// Columns `date,bucket,mean_diff,lo,hi`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("date,bucket,mean_diff,lo,hi\n");
        for (t, d) in self.dates.iter().enumerate() {
            for (b, (name, _, _)) in BUCKETS.iter().enumerate() {
                let _ = writeln!(s, "{d},{name},{},{},{}", self.mean[t][b], self.lo[t][b], self.hi[t][b]);
            }
        }
        s
    }
}

fn yields_at(x: &DVector<f64>, fit: &FitResult, u: Option<&FactorPanel>, t: usize, lam: &NsLoadingMatrix) -> DVector<f64> {
    let mu = fit.params.mu();
    let state = DVector::from_fn(3, |i, _| x[i] + mu[i]);
    let mut y = &lam.matrix * state;
    if let Some(u) = u {
        y += &fit.params.gamma * u.values.row(t).transpose();
    }
    y
}

/// Simulated `level` band of the bucketed difference between two fits.
///
/// Both fits are sampled from `N(a_t, P_t)` with the same standard normal
/// draws, so identical fits give an identically zero band. Date `t` uses its
/// own stream of `seed`, making the result independent of execution order.
#[allow(clippy::too_many_arguments)]
pub fn confidence_band(
    fit_a: &FitResult,
    fit_b: &FitResult,
    u_a: Option<&FactorPanel>,
    u_b: Option<&FactorPanel>,
    n: usize,
    level: f64,
    seed: u64,
    exec: Execution,
) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    if n < 100 {
        return invalid(format!("band needs at least 100 samples, got {n}"));
    }
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("coverage must lie in (0, 1), got {level}"));
    }
    if fit_a.grid != fit_b.grid || fit_a.filter.len() != fit_b.filter.len() {
        return dim("fits cover different grids or sample lengths");
    }
    let lam_a = fit_a.loadings()?;
    let lam_b = fit_b.loadings()?;
    let cols = bucket_columns(fit_a.grid.tenors())?;
    let tails = [(1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0];
    let rows = exec.map_range(fit_a.filter.len(), |t| -> Result<([f64; 3], [f64; 3])> {
        let root = |f: &FitResult| {
            let p = &f.filter.p_filt[t];
            cov_sqrt(&DMatrix::from_fn(3, 3, |i, j| p[(i, j)]))
        };
        let (ra, rb) = (root(fit_a)?, root(fit_b)?);
        let ma = DVector::from_fn(3, |i, _| fit_a.filter.a_filt[t][i]);
        let mb = DVector::from_fn(3, |i, _| fit_b.filter.a_filt[t][i]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let mut samples: [Vec<f64>; 3] = Default::default();
        for _ in 0..n {
            let z = DVector::from_fn(3, |_, _| rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng));
            let xa = &ma + &ra * &z;
            let xb = &mb + &rb * &z;
            let diff = yields_at(&xb, fit_b, u_b, t, &lam_b) - yields_at(&xa, fit_a, u_a, t, &lam_a);
            let m = bucket_means(&diff, &cols);
            for b in 0..3 {
                samples[b].push(m[b]);
            }
        }
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for b in 0..3 {
            let q = quantiles(&mut samples[b], &tails);
            lo[b] = q[0];
            hi[b] = q[1];
        }
        Ok((lo, hi))
    });
    let rows: Vec<_> = rows.into_iter().collect::<Result<_>>()?;
    Ok(rows.into_iter().unzip())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressConfig {
    pub q: usize,
    pub kind: CovKind,
    pub lambda: f64,
    pub gamma_grid: GammaGrid,
    pub fit: FitOptions,
    pub band_samples: usize,
    pub level: f64,
    pub seed: u64,
    /// Re-estimate the response model under each shocked reference; when
    /// false the baseline parameters are kept and only the factors change.
    pub refit_response: bool,
    pub exec: Execution,
}

impl Default for StressConfig {
    fn default() -> Self {
        StressConfig {
            q: 3,
            kind: CovKind::Band,
            lambda: crate::nelson_siegel::DEFAULT_LAMBDA,
            gamma_grid: GammaGrid::default(),
            fit: FitOptions::default(),
            band_samples: 1000,
            level: 0.95,
            seed: 0,
            refit_response: true,
            exec: Execution::default(),
        }
    }
}

/// One pass of gamma search, kernel PCA, DNS-FR fit and fitted yields.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub gamma: f64,
    pub kpca: KpcaModel,
    pub factors: FactorPanel,
    pub fit: FitResult,
    pub fitted: DMatrix<f64>,
}

fn run_pipeline(reference: &YieldPanel, response: &YieldPanel, cfg: &StressConfig, frozen: Option<&FitResult>) -> Result<Pipeline> {
    let search = grid_search_gamma(reference, cfg.q, &cfg.gamma_grid, Execution::Sequential)?;
    let kpca = KpcaModel::train(reference, KernelConfig::new(search.gamma)?, cfg.q)?;
    let factors = extract_factors(&kpca, reference)?;
    let lam = loading_matrix(response.grid(), cfg.lambda)?;
    let fit = match frozen {
        None => fit_mle(response, Some(&factors), cfg.kind, cfg.lambda, None, &cfg.fit)?,
        Some(base) => {
            let filter = filter_at(response, Some(&factors), &base.params, &lam)?;
            FitResult {
                loglik: filter.loglik,
                filter,
                ..base.clone()
            }
        }
    };
    let fitted = fitted_yields(&fit, Some(&factors), &lam, StateChoice::Filtered)?;
    Ok(Pipeline {
        gamma: search.gamma,
        kpca,
        factors,
        fit,
        fitted,
    })
}

/// Baseline pipeline on the unshocked reference panel.
pub fn run_baseline(reference: &YieldPanel, response: &YieldPanel, cfg: &StressConfig) -> Result<Pipeline> {
    if reference.dates() != response.dates() {
        return dim("reference and response panels must share dates");
    }
    run_pipeline(reference, response, cfg, None)
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub spec: ShockSpec,
    pub gamma: f64,
    pub band_seed: u64,
    pub diff: BucketDiff,
    pub shocked: Pipeline,
}

/// Reruns the pipeline on the shocked reference and compares it with
/// `baseline`. `case_index` selects the band's random stream.
pub fn run_scenario_with_baseline(
    spec: &ShockSpec,
    case_index: usize,
    baseline: &Pipeline,
    reference: &YieldPanel,
    response: &YieldPanel,
    cfg: &StressConfig,
) -> Result<ScenarioResult> {
    let shocked_ref = apply_shock(reference, spec)?;
    let frozen = (!cfg.refit_response).then_some(&baseline.fit);
    let shocked = run_pipeline(&shocked_ref, response, cfg, frozen)?;
    let cols = bucket_columns(response.grid().tenors())?;
    let mean: Vec<[f64; 3]> = (0..response.n_dates())
        .map(|t| {
            let d = (shocked.fitted.row(t) - baseline.fitted.row(t)).transpose();
            bucket_means(&d, &cols)
        })
        .collect();
    let band_seed = derive_seed(cfg.seed, case_index as u64);
    let (lo, hi) = confidence_band(
        &baseline.fit,
        &shocked.fit,
        Some(&baseline.factors),
        Some(&shocked.factors),
        cfg.band_samples,
        cfg.level,
        band_seed,
        cfg.exec,
    )?;
    Ok(ScenarioResult {
        spec: spec.clone(),
        gamma: shocked.gamma,
        band_seed,
        diff: BucketDiff {
            dates: response.dates().to_vec(),
            mean,
            lo,
            hi,
        },
        shocked,
    })
}

pub fn run_scenario(spec: &ShockSpec, reference: &YieldPanel, response: &YieldPanel, cfg: &StressConfig) -> Result<ScenarioResult> {
    let baseline = run_baseline(reference, response, cfg)?;
    run_scenario_with_baseline(spec, 0, &baseline, reference, response, cfg)
}

/// Runs several catalogue cases against one baseline; results keep the
/// order of `specs`.
pub fn run_suite(
    specs: &[(usize, ShockSpec)],
    reference: &YieldPanel,
    response: &YieldPanel,
    cfg: &StressConfig,
) -> Result<(Pipeline, Vec<ScenarioResult>)> {
    let baseline = run_baseline(reference, response, cfg)?;
    let results = cfg
        .exec
        .map_slice(specs, |(i, s)| run_scenario_with_baseline(s, *i, &baseline, reference, response, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((baseline, results))
}

/// Tenor labels of a shock, for manifests.
pub fn spec_tenor_labels(spec: &ShockSpec) -> Vec<String> {
    spec.tenors.iter().map(|t| tenor_label(*t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::MaturityGrid;
    use crate::state_space::{CovStructure, SsmParams};
    use nalgebra::{Matrix3, Vector3};
    use rand::Rng;

    fn panel_2014_2016() -> YieldPanel {
        let start = Month::new(2014, 1).unwrap();
        let dates: Vec<Month> = (0..36).map(|k| start.offset(k)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = DMatrix::from_fn(36, 12, |_, c| 1.0 + 0.2 * c as f64 + rng.random_range(-0.1..0.1));
        YieldPanel::complete(dates, v, MaturityGrid::canonical()).unwrap()
    }

    #[test]
    fn catalog_matches_cases() {
        let c = scenario_catalog();
        assert_eq!(c.len(), 8);
        let names: Vec<&str> = c.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["1.1", "1.2", "1.3", "1.4", "2.1", "2.2", "2.3", "2.4"]);
        for k in 0..4 {
            assert_eq!(c[k].tenors, c[k + 4].tenors);
            assert_eq!(c[k].start, c[k + 4].start);
            assert_eq!(c[k].end, Some(Month::new(2015, 12).unwrap()));
            assert_eq!(c[k + 4].end, None);
        }
        assert_eq!(c[7].tenors, MaturityGrid::CANONICAL.to_vec());
        assert!(c.iter().all(|s| s.multiplier == 2.0));
    }

    #[test]
    fn identity_and_uniform_shocks() {
        let p = panel_2014_2016();
        let all = ShockSpec {
            name: "x".into(),
            start: p.dates()[0],
            end: None,
            tenors: MaturityGrid::CANONICAL.to_vec(),
            multiplier: 1.0,
        };
        assert_eq!(apply_shock(&p, &all).unwrap(), p);
        let doubled = apply_shock(&p, &all.with_multiplier(2.0)).unwrap();
        assert_eq!(doubled.values(), &(p.values() * 2.0));
    }

    #[test]
    fn long_end_case_touches_exact_cells() {
        let p = panel_2014_2016();
        let spec = &scenario_catalog()[2];
        let s = apply_shock(&p, spec).unwrap();
        let mut changed = 0;
        for r in 0..36 {
            for c in 0..12 {
                let inside = p.dates()[r].year() == 2015 && (c == 10 || c == 11);
                if inside {
                    assert_eq!(s.values()[(r, c)], 2.0 * p.values()[(r, c)]);
                    changed += 1;
                } else {
                    assert_eq!(s.values()[(r, c)], p.values()[(r, c)]);
                }
            }
        }
        assert_eq!(changed, 24);
        assert_eq!(s.mask(), p.mask());
    }

    #[test]
    fn composition_properties() {
        let p = panel_2014_2016();
        let c = scenario_catalog();
        let ab = apply_shock(&apply_shock(&p, &c[0]).unwrap(), &c[2]).unwrap();
        let ba = apply_shock(&apply_shock(&p, &c[2]).unwrap(), &c[0]).unwrap();
        assert_eq!(ab, ba);
        let twice = apply_shock(&apply_shock(&p, &c[5].with_multiplier(2.0)).unwrap(), &c[5].with_multiplier(4.0)).unwrap();
        let once = apply_shock(&p, &c[5].with_multiplier(8.0)).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn rejects_bad_specs() {
        let p = panel_2014_2016();
        let mut s = scenario_catalog()[0].clone();
        s.tenors = vec![7.0];
        assert!(apply_shock(&p, &s).is_err());
        s.tenors = vec![];
        assert!(apply_shock(&p, &s).is_err());
        let mut s = scenario_catalog()[0].clone();
        s.multiplier = 0.0;
        assert!(apply_shock(&p, &s).is_err());
        let mut s = scenario_catalog()[0].clone();
        s.end = Some(Month::new(2014, 1).unwrap());
        assert!(apply_shock(&p, &s).is_err());
    }

    fn toy_fit(a: Vec<Vector3<f64>>, p: Vec<Matrix3<f64>>, grid: &MaturityGrid) -> FitResult {
        let t = a.len();
        let start = Month::new(2020, 1).unwrap();
        FitResult {
            params: SsmParams {
                lambda: 0.0609,
                psi0: Vector3::new(0.1, 0.0, 0.0),
                psi1: Vector3::repeat(0.5),
                sigma_eta: Vector3::repeat(0.1),
                cov: CovStructure::Diag { sigma: vec![0.1; grid.len()] },
                gamma: DMatrix::zeros(grid.len(), 0),
            },
            loglik: 0.0,
            iterations: 0,
            evaluations: 0,
            converged: true,
            start: 0,
            trace: vec![],
            filter: crate::state_space::FilterOutput {
                a_pred: a.clone(),
                p_pred: p.clone(),
                a_filt: a,
                p_filt: p,
                innovations: vec![],
                innovation_cov: vec![],
                obs_rows: vec![],
                loglik: 0.0,
            },
            dates: (0..t as i32).map(|k| start.offset(k)).collect(),
            grid: grid.clone(),
        }
    }

    #[test]
    fn identical_fits_give_zero_band() {
        let grid = MaturityGrid::canonical();
        let f = toy_fit(vec![Vector3::new(0.5, -0.2, 0.1); 3], vec![Matrix3::identity() * 0.3; 3], &grid);
        let (lo, hi) = confidence_band(&f, &f, None, None, 500, 0.95, 9, Execution::Sequential).unwrap();
        assert!(lo.iter().chain(&hi).all(|r| r.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn zero_variance_collapses() {
        let grid = MaturityGrid::canonical();
        let a = toy_fit(vec![Vector3::new(0.5, -0.2, 0.1); 2], vec![Matrix3::zeros(); 2], &grid);
        let b = toy_fit(vec![Vector3::new(0.7, 0.1, -0.3); 2], vec![Matrix3::zeros(); 2], &grid);
        let (lo, hi) = confidence_band(&a, &b, None, None, 200, 0.95, 1, Execution::Sequential).unwrap();
        let lam = a.loadings().unwrap();
        let cols = bucket_columns(grid.tenors()).unwrap();
        let x = |f: &FitResult| DVector::from_fn(3, |i, _| f.filter.a_filt[0][i]);
        let d = yields_at(&x(&b), &b, None, 0, &lam) - yields_at(&x(&a), &a, None, 0, &lam);
        let m = bucket_means(&d, &cols);
        assert_eq!(lo[0], m);
        assert_eq!(hi[0], m);
    }

    #[test]
    fn band_depends_only_on_seed() {
        let grid = MaturityGrid::canonical();
        let a = toy_fit(vec![Vector3::new(0.5, -0.2, 0.1); 4], vec![Matrix3::identity() * 0.2; 4], &grid);
        let b = toy_fit(vec![Vector3::new(0.6, -0.1, 0.0); 4], vec![Matrix3::identity() * 0.4; 4], &grid);
        let x = confidence_band(&a, &b, None, None, 300, 0.95, 3, Execution::Sequential).unwrap();
        let y = confidence_band(&a, &b, None, None, 300, 0.95, 3, Execution::Parallel).unwrap();
        let z = confidence_band(&a, &b, None, None, 300, 0.95, 4, Execution::Sequential).unwrap();
        assert_eq!(x, y);
        assert_ne!(x, z);
        for t in 0..4 {
            for k in 0..3 {
                assert!(x.0[t][k] <= x.1[t][k]);
            }
        }
        assert!(confidence_band(&a, &b, None, None, 99, 0.95, 3, Execution::Sequential).is_err());
    }

    #[test]
    fn bucket_layout() {
        let cols = bucket_columns(&MaturityGrid::CANONICAL).unwrap();
        assert_eq!(cols[0], vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(cols[1], vec![8, 9]);
        assert_eq!(cols[2], vec![10, 11]);
        let d = BucketDiff {
            dates: vec![Month::new(2020, 1).unwrap()],
            mean: vec![[0.0; 3]],
            lo: vec![[0.0; 3]],
            hi: vec![[0.0; 3]],
        };
        assert!(d.is_zero());
        assert_eq!(d.to_csv().lines().count(), 4);
    }
}

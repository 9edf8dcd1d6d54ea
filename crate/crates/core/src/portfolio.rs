//! Bond-ladder simulation over forecast yield distributions.
//!
//! Month `i = 0..investments` buys `p` of the ladder bond. Cash accrues at
//! EFFR/12, matured bonds pay their GBP face converted at that month's fx,
//! and holdings are revalued on the sampled curve. Yields are in percent.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Error, Result};
use crate::exec::Execution;
use crate::forecasting::ForecastResult;
use crate::market_data::{interp_linear_flat, Month};
use crate::stats::{cov_sqrt, draw_gaussian, mean, quantile_sorted};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    pub initial_wealth: f64,
    pub investments: usize,
    pub monthly_spend: f64,
    /// Ladder bond tenor in months.
    pub bond_tenor: usize,
    pub face_value_gbp: f64,
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig {
            initial_wealth: 12_000_000.0,
            investments: 13,
            monthly_spend: 1_000_000.0,
            bond_tenor: 12,
            face_value_gbp: 100.0,
        }
    }
}

impl LadderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_wealth > 0.0 && self.monthly_spend > 0.0 && self.face_value_gbp > 0.0) {
            return invalid("ladder amounts must be positive");
        }
        if self.investments == 0 || self.bond_tenor == 0 {
            return invalid("ladder needs at least one investment and a positive tenor");
        }
        Ok(())
    }
}

/// Deterministic EFFR (decimal, annualised) and GBP/USD series; entry `i`
/// applies to ladder month `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSeries {
    pub dates: Vec<Month>,
    pub effr: Vec<f64>,
    pub fx: Vec<f64>,
}

impl MarketSeries {
    pub fn new(dates: Vec<Month>, effr: Vec<f64>, fx: Vec<f64>) -> Result<Self> {
        if dates.len() != effr.len() || dates.len() != fx.len() {
            return dim("market series columns differ in length");
        }
        if fx.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return invalid("exchange rates must be positive");
        }
        if dates.windows(2).any(|w| w[1] != w[0].offset(1)) {
            return invalid("market dates must be consecutive months");
        }
        Ok(MarketSeries { dates, effr, fx })
    }

    pub fn constant(start: Month, months: usize, effr: f64, fx: f64) -> Result<Self> {
        Self::new(
            (0..months as i32).map(|k| start.offset(k)).collect(),
            vec![effr; months],
            vec![fx; months],
        )
    }

    /// The series from `start` onwards.
    pub fn starting_at(&self, start: Month) -> Result<Self> {
        let k = self
            .dates
            .iter()
            .position(|d| *d == start)
            .ok_or_else(|| Error::InvalidInput(format!("market series has no entry for {start}")))?;
        Ok(MarketSeries {
            dates: self.dates[k..].to_vec(),
            effr: self.effr[k..].to_vec(),
            fx: self.fx[k..].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Reads `date,effr_percent,fx`. A blank EFFR is stored as NaN and only
/// rejected if the simulation needs it.
pub fn load_market_csv(path: &Path) -> Result<MarketSeries> {
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => csv_err(e.to_string()),
        })?;
    let headers = rdr.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| csv_err(format!("missing column {name}")))
    };
    let (cd, ce, cf) = (col("date")?, col("effr_percent")?, col("fx")?);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(format!("line {line}: {e}")))?;
        let date: Month = rec
            .get(cd)
            .unwrap_or("")
            .parse()
            .map_err(|e: Error| csv_err(format!("line {line}: {e}")))?;
        let effr = match rec.get(ce).unwrap_or("") {
            "" => f64::NAN,
            s => s.parse::<f64>().map_err(|e| csv_err(format!("line {line}: {e}")))? / 100.0,
        };
        let fx = rec
            .get(cf)
            .unwrap_or("")
            .parse::<f64>()
            .map_err(|e| csv_err(format!("line {line}: fx {e}")))?;
        rows.push((date, effr, fx));
    }
    rows.sort_by_key(|r| r.0);
    MarketSeries::new(
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
        rows.iter().map(|r| r.2).collect(),
    )
}

/// Bonds bought with `p` USD at continuously compounded yield `y`
/// (decimal), tenor in months: `p / (face_usd e^{-(T/12) y})`.
pub fn bond_count(p: f64, face_usd: f64, tenor_months: f64, y: f64) -> Result<f64> {
    if !(p > 0.0 && face_usd > 0.0 && tenor_months > 0.0) || !y.is_finite() {
        return invalid(format!(
            "bond_count needs positive amounts and tenor (p={p}, face={face_usd}, T={tenor_months}, y={y})"
        ));
    }
    Ok(p / (face_usd * (-(tenor_months / 12.0) * y).exp()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Holding {
    pub purchase_month: usize,
    pub count: f64,
    /// Months to maturity at the current valuation month.
    pub remaining: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Valuation {
    pub bond_leg: f64,
    /// `(1 + r/12) C_prev` plus maturity proceeds.
    pub cash: f64,
    pub matured_proceeds: f64,
    pub value: f64,
}

/// A yield curve (percent) on ascending tenors, interpolated linearly.
#[derive(Debug, Clone, Copy)]
pub struct Curve<'a> {
    pub tenors: &'a [f64],
    pub yields: &'a [f64],
}

impl Curve<'_> {
    /// Decimal yield at `tau` months.
    pub fn at(&self, tau: f64) -> f64 {
        let knots: Vec<(f64, f64)> = self.tenors.iter().copied().zip(self.yields.iter().copied()).collect();
        interp_linear_flat(&knots, tau) / 100.0
    }
}

/// Values holdings and the cash account for one month. Holdings with zero
/// remaining months pay face into cash.
pub fn portfolio_value(
    inventory: &[Holding],
    cash_prev: f64,
    curve: Option<Curve<'_>>,
    fx: f64,
    r: f64,
    face_gbp: f64,
) -> Result<Valuation> {
    let face_usd = face_gbp * fx;
    let mut bond_leg = 0.0;
    let mut matured = 0.0;
    for h in inventory {
        if h.remaining == 0 {
            matured += h.count * face_usd;
        } else {
            let c = curve.ok_or_else(|| Error::InvalidInput("no yield curve to value open holdings".into()))?;
            let tau = h.remaining as f64;
            bond_leg += h.count * face_usd * (-(tau / 12.0) * c.at(tau)).exp();
        }
    }
    let cash = (1.0 + r / 12.0) * cash_prev + matured;
    Ok(Valuation {
        bond_leg,
        cash,
        matured_proceeds: matured,
        value: bond_leg + cash,
    })
}

/// One month of a simulated ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthState {
    pub month: usize,
    pub cash: f64,
    pub bond_value: f64,
    pub value: f64,
    pub holdings: Vec<Holding>,
}

/// Runs the month loop over explicit curves (`curves[i]` in percent on
/// `tenors`, month 0 first).
pub fn run_ladder(
    config: &LadderConfig,
    market: &MarketSeries,
    tenors: &[f64],
    curves: &[Vec<f64>],
) -> Result<Vec<MonthState>> {
    config.validate()?;
    let months = curves.len();
    if market.len() < months {
        return dim(format!("market series covers {} months, ladder needs {months}", market.len()));
    }
    let tenor = config.bond_tenor as f64;
    let mut holdings: Vec<Holding> = Vec::new();
    let mut cash = config.initial_wealth;
    let mut out = Vec::with_capacity(months);
    for (i, curve) in curves.iter().enumerate() {
        if curve.len() != tenors.len() {
            return dim("curve length differs from the tenor grid");
        }
        let curve = Curve { tenors, yields: curve };
        let r = if i == 0 { 0.0 } else { market.effr[i] };
        if r.is_nan() {
            return Err(Error::InvalidInput(format!("EFFR missing for ladder month {i}")));
        }
        let fx = market.fx[i];
        for h in holdings.iter_mut() {
            if i > 0 {
                h.remaining -= 1;
            }
        }
        let v = portfolio_value(&holdings, cash, Some(curve), fx, r, config.face_value_gbp)?;
        holdings.retain(|h| h.remaining > 0);
        cash = v.cash;
        let mut bond_value = v.bond_leg;
        if i < config.investments {
            if cash < config.monthly_spend {
                return Err(Error::Infeasible(format!(
                    "month {i}: cash {cash:.2} cannot fund the {:.2} purchase",
                    config.monthly_spend
                )));
            }
            let y = curve.at(tenor);
            let face_usd = config.face_value_gbp * fx;
            let count = bond_count(config.monthly_spend, face_usd, tenor, y)?;
            cash -= config.monthly_spend;
            bond_value += count * face_usd * (-(tenor / 12.0) * y).exp();
            holdings.push(Holding {
                purchase_month: i,
                count,
                remaining: config.bond_tenor,
            });
        }
        out.push(MonthState {
            month: i,
            cash,
            bond_value,
            value: bond_value + cash,
            holdings: holdings.clone(),
        });
    }
    Ok(out)
}

/// Per-month 5th percentile of simulated values (`samples[path][month]`).
pub fn var_5(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(path_quantiles(samples, &[0.05])?.into_iter().map(|q| q[0]).collect())
}

fn path_quantiles(samples: &[Vec<f64>], ps: &[f64]) -> Result<Vec<Vec<f64>>> {
    if samples.len() < 100 {
        return invalid(format!("need at least 100 paths, got {}", samples.len()));
    }
    let months = samples[0].len();
    if samples.iter().any(|s| s.len() != months) {
        return dim("paths differ in length");
    }
    Ok((0..months)
        .map(|m| {
            let mut col: Vec<f64> = samples.iter().map(|s| s[m]).collect();
            col.sort_by(f64::total_cmp);
            ps.iter().map(|&p| quantile_sorted(&col, p)).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderMonth {
    pub month: usize,
    pub date: Month,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub var5: f64,
    pub cash: f64,
    pub bond_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderPath {
    pub months: Vec<LadderMonth>,
    /// Ladder run on the point-forecast curves, with its inventory.
    pub central: Vec<MonthState>,
    pub n_paths: usize,
    pub seed: u64,
}

impl LadderPath {
    /// Columns `month,date,mean,lo,hi,var5,cash,bond_value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("month,date,mean,lo,hi,var5,cash,bond_value\n");
        for m in &self.months {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                m.month, m.date, m.mean, m.lo, m.hi, m.var5, m.cash, m.bond_value
            );
        }
        s
    }
}

/// Simulates `n` ladders. Month 0 uses `initial_curve` (the last observed
/// curve); month `k >= 1` draws from the `k`-step forecast marginal,
/// independently across steps. Path `j` uses stream `j` of `seed`.
pub fn simulate_ladder(
    config: &LadderConfig,
    market: &MarketSeries,
    forecast: &ForecastResult,
    initial_curve: &[f64],
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<LadderPath> {
    config.validate()?;
    let months = config.investments;
    if forecast.horizon() + 1 < months {
        return invalid(format!(
            "forecast horizon {} is shorter than the {} ladder months after the first",
            forecast.horizon(),
            months - 1
        ));
    }
    if n < 100 {
        return invalid(format!("need at least 100 paths, got {n}"));
    }
    let tenors = forecast.grid.tenors();
    if initial_curve.len() != tenors.len() {
        return dim("initial curve does not match the forecast grid");
    }
    let roots: Vec<DMatrix<f64>> = forecast.covariances[..months - 1]
        .iter()
        .map(cov_sqrt)
        .collect::<Result<_>>()?;
    let mean_curve = |k: usize| -> Vec<f64> { forecast.yields.row(k).iter().copied().collect() };
    let central_curves: Vec<Vec<f64>> = std::iter::once(initial_curve.to_vec())
        .chain((0..months - 1).map(mean_curve))
        .collect();
    let central = run_ladder(config, market, tenors, &central_curves)?;

    let paths = exec.map_range(n, |j| -> Result<Vec<MonthState>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(j as u64);
        let mut curves = Vec::with_capacity(months);
        curves.push(initial_curve.to_vec());
        for k in 0..months - 1 {
            let m = forecast.yields.row(k).transpose();
            curves.push(draw_gaussian(&m, &roots[k], &mut rng).iter().copied().collect());
        }
        run_ladder(config, market, tenors, &curves)
    });
    let paths: Vec<Vec<MonthState>> = paths.into_iter().collect::<Result<_>>()?;
    let values: Vec<Vec<f64>> = paths.iter().map(|p| p.iter().map(|m| m.value).collect()).collect();
    let q = path_quantiles(&values, &[0.025, 0.975, 0.05])?;
    let start = forecast.origin;
    let months_out = (0..months)
        .map(|i| {
            let col = |f: fn(&MonthState) -> f64| mean(&paths.iter().map(|p| f(&p[i])).collect::<Vec<_>>());
            LadderMonth {
                month: i,
                date: start.offset(i as i32),
                mean: col(|m| m.value),
                lo: q[i][0],
                hi: q[i][1],
                var5: q[i][2],
                cash: col(|m| m.cash),
                bond_value: col(|m| m.bond_value),
            }
        })
        .collect();
    Ok(LadderPath {
        months: months_out,
        central,
        n_paths: n,
        seed,
    })
}

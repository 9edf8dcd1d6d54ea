//! Yield panels: CSV ingestion, gap filling and maturity matching.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{dim, invalid, Error, Result};
use crate::nelson_siegel::loading_row;

/// Calendar month, stored as `year * 12 + (month - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month(i32);

impl Month {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return invalid(format!("month out of range: {month}"));
        }
        Ok(Month(year * 12 + month as i32 - 1))
    }

    pub fn year(self) -> i32 {
        self.0.div_euclid(12)
    }

    pub fn month(self) -> u32 {
        self.0.rem_euclid(12) as u32 + 1
    }

    pub fn offset(self, months: i32) -> Self {
        Month(self.0 + months)
    }

    /// Signed number of months from `other` to `self`.
    pub fn months_since(self, other: Month) -> i32 {
        self.0 - other.0
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for Month {
    type Err = Error;

    /// Accepts `YYYY-MM` and `YYYY-MM-DD` (the day is ignored).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut parts = s.split('-');
        let (Some(y), Some(m)) = (parts.next(), parts.next()) else {
            return invalid(format!("cannot parse month stamp '{s}'"));
        };
        let year: i32 = y
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad year in '{s}'")))?;
        let month: u32 = m
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad month in '{s}'")))?;
        Month::new(year, month)
    }
}

impl Serialize for Month {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered times to maturity, in months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MaturityGrid {
    tenors: Vec<f64>,
}

impl MaturityGrid {
    pub const CANONICAL: [f64; 12] = [
        1.0, 3.0, 6.0, 9.0, 12.0, 24.0, 36.0, 60.0, 84.0, 120.0, 240.0, 360.0,
    ];

    pub fn new(tenors: Vec<f64>) -> Result<Self> {
        if tenors.len() < 4 {
            return invalid(format!(
                "maturity grid needs at least 4 tenors, got {}",
                tenors.len()
            ));
        }
        if tenors.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return invalid("tenors must be finite and positive");
        }
        if tenors.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("tenors must be strictly increasing");
        }
        Ok(MaturityGrid { tenors })
    }

    pub fn canonical() -> Self {
        MaturityGrid {
            tenors: Self::CANONICAL.to_vec(),
        }
    }

    pub fn tenors(&self) -> &[f64] {
        &self.tenors
    }

    pub fn len(&self) -> usize {
        self.tenors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tenors.is_empty()
    }

    pub fn position(&self, tenor: f64) -> Option<usize> {
        self.tenors.iter().position(|t| (t - tenor).abs() < 1e-9)
    }
}

impl TryFrom<Vec<f64>> for MaturityGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        MaturityGrid::new(v)
    }
}

impl From<MaturityGrid> for Vec<f64> {
    fn from(g: MaturityGrid) -> Self {
        g.tenors
    }
}

/// Dated T x N panel of yields in percent, with an observation mask.
///
/// Unrecorded cells hold `NaN` in `values` and `false` in `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldPanel {
    dates: Vec<Month>,
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    grid: MaturityGrid,
}

impl YieldPanel {
    pub fn new(
        dates: Vec<Month>,
        values: DMatrix<f64>,
        mask: DMatrix<bool>,
        grid: MaturityGrid,
    ) -> Result<Self> {
        let t = dates.len();
        let n = grid.len();
        if values.shape() != (t, n) || mask.shape() != (t, n) {
            return dim(format!(
                "panel is {t}x{n} but values are {:?} and mask {:?}",
                values.shape(),
                mask.shape()
            ));
        }
        if dates.windows(2).any(|w| w[1].months_since(w[0]) != 1) {
            return invalid("panel dates must be consecutive months");
        }
        let mut values = values;
        for r in 0..t {
            for c in 0..n {
                if mask[(r, c)] {
                    if !values[(r, c)].is_finite() {
                        return invalid(format!(
                            "non-finite recorded yield at {} tenor {}",
                            dates[r],
                            grid.tenors()[c]
                        ));
                    }
                } else {
                    values[(r, c)] = f64::NAN;
                }
            }
        }
        Ok(YieldPanel {
            dates,
            values,
            mask,
            grid,
        })
    }

    /// Fully observed panel.
    pub fn complete(dates: Vec<Month>, values: DMatrix<f64>, grid: MaturityGrid) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::new(dates, values, mask, grid)
    }

    pub fn dates(&self) -> &[Month] {
        &self.dates
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn grid(&self) -> &MaturityGrid {
        &self.grid
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_tenors(&self) -> usize {
        self.grid.len()
    }

    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.mask[(t, i)]
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Values as a dense vector for date `t` (NaN where missing).
    pub fn row(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    pub fn position_of(&self, date: Month) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_dates() {
            return invalid(format!(
                "bad slice {start}..{end} of {} dates",
                self.n_dates()
            ));
        }
        let rows = end - start;
        Ok(YieldPanel {
            dates: self.dates[start..end].to_vec(),
            values: self.values.rows(start, rows).into_owned(),
            mask: self.mask.rows(start, rows).into_owned(),
            grid: self.grid.clone(),
        })
    }

    /// Rows dated on or before `end`.
    pub fn until(&self, end: Month) -> Result<Self> {
        let n = self.dates.iter().take_while(|d| **d <= end).count();
        self.slice(0, n)
    }

    /// Appends rows that continue the monthly sequence.
    pub fn append_rows(&self, extra: &DMatrix<f64>) -> Result<Self> {
        if extra.ncols() != self.n_tenors() {
            return dim("appended rows must match the tenor count");
        }
        let t0 = self.n_dates();
        let t = t0 + extra.nrows();
        let last = *self
            .dates
            .last()
            .ok_or_else(|| Error::InvalidInput("empty panel".into()))?;
        let mut dates = self.dates.clone();
        dates.extend((1..=extra.nrows() as i32).map(|k| last.offset(k)));
        let mut values = self.values.clone().resize_vertically(t, 0.0);
        values.rows_mut(t0, extra.nrows()).copy_from(extra);
        let mut mask = self.mask.clone().resize_vertically(t, true);
        for r in t0..t {
            for c in 0..self.n_tenors() {
                mask[(r, c)] = true;
            }
        }
        YieldPanel::new(dates, values, mask, self.grid.clone())
    }

    /// Same mask and dates with new values (NaN cells stay missing).
    pub fn with_values(&self, values: DMatrix<f64>) -> Result<Self> {
        YieldPanel::new(
            self.dates.clone(),
            values,
            self.mask.clone(),
            self.grid.clone(),
        )
    }

    /// Per-tenor count of unrecorded cells.
    pub fn missing_counts(&self) -> Vec<usize> {
        (0..self.n_tenors())
            .map(|c| (0..self.n_dates()).filter(|&r| !self.mask[(r, c)]).count())
            .collect()
    }
}

fn parse_tenor(header: &str) -> Option<f64> {
    let h = header.trim();
    let v: f64 = h.parse().ok()?;
    (v > 0.0 && v.is_finite()).then_some(v)
}

/// Loads a `date,<tenor>,<tenor>,...` CSV of percent yields.
///
/// The panel's grid is taken from the tenor headers (sorted ascending).
/// Empty or non-numeric cells become unrecorded.
pub fn load_yield_csv(path: &Path) -> Result<YieldPanel> {
    let csv_err = |message: String| Error::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => csv_err(e.to_string()),
        })?;
    let headers = reader.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    let mut columns: Vec<(usize, f64)> = headers
        .iter()
        .enumerate()
        .skip(1)
        .filter_map(|(i, h)| parse_tenor(h).map(|t| (i, t)))
        .collect();
    if columns.is_empty() {
        return Err(csv_err("no parsable tenor columns".into()));
    }
    columns.sort_by(|a, b| a.1.total_cmp(&b.1));
    let grid = MaturityGrid::new(columns.iter().map(|c| c.1).collect())
        .map_err(|e| csv_err(e.to_string()))?;

    let mut rows: Vec<(Month, Vec<Option<f64>>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        let date: Month = record
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|e: Error| csv_err(format!("line {}: {e}", line + 2)))?;
        let cells = columns
            .iter()
            .map(|&(i, _)| {
                record
                    .get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            })
            .collect();
        rows.push((date, cells));
    }
    if rows.is_empty() {
        return Err(csv_err("no data rows".into()));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(csv_err(format!("duplicate date {}", w[0].0)));
    }
    let t = rows.len();
    let n = grid.len();
    let mut values = DMatrix::from_element(t, n, f64::NAN);
    let mut mask = DMatrix::from_element(t, n, false);
    for (r, (_, cells)) in rows.iter().enumerate() {
        for (c, cell) in cells.iter().enumerate() {
            if let Some(v) = cell {
                values[(r, c)] = *v;
                mask[(r, c)] = true;
            }
        }
    }
    let dates = rows.into_iter().map(|r| r.0).collect();
    YieldPanel::new(dates, values, mask, grid).map_err(|e| csv_err(e.to_string()))
}

/// Formats a tenor header without a trailing `.0` for whole months.
pub fn tenor_label(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

/// Renders a panel in the layout `load_yield_csv` reads.
pub fn yield_csv_string(panel: &YieldPanel) -> String {
    let mut out = String::from("date");
    for &t in panel.grid.tenors() {
        out.push(',');
        out.push_str(&tenor_label(t));
    }
    out.push('\n');
    for (r, d) in panel.dates.iter().enumerate() {
        out.push_str(&d.to_string());
        for c in 0..panel.n_tenors() {
            out.push(',');
            if panel.mask[(r, c)] {
                out.push_str(&format!("{}", panel.values[(r, c)]));
            }
        }
        out.push('\n');
    }
    out
}

/// Writes a panel in the same layout `load_yield_csv` reads.
pub fn write_yield_csv(panel: &YieldPanel, path: &Path) -> Result<()> {
    std::fs::write(path, yield_csv_string(panel)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Linear interpolation in maturity over each date's recorded tenors, with
/// flat extrapolation beyond the recorded range.
pub fn interpolate_missing(panel: &YieldPanel) -> Result<YieldPanel> {
    let tenors = panel.grid.tenors();
    let mut values = panel.values.clone();
    for r in 0..panel.n_dates() {
        let known: Vec<(f64, f64)> = (0..panel.n_tenors())
            .filter(|&c| panel.mask[(r, c)])
            .map(|c| (tenors[c], panel.values[(r, c)]))
            .collect();
        if known.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "{} has {} recorded tenors, need 2",
                panel.dates[r],
                known.len()
            )));
        }
        for c in 0..panel.n_tenors() {
            if !panel.mask[(r, c)] {
                values[(r, c)] = interp_linear_flat(&known, tenors[c]);
            }
        }
    }
    let mask = DMatrix::from_element(panel.n_dates(), panel.n_tenors(), true);
    YieldPanel::new(panel.dates.clone(), values, mask, panel.grid.clone())
}

/// Piecewise-linear interpolation through sorted `(x, y)` knots, flat outside.
pub fn interp_linear_flat(knots: &[(f64, f64)], x: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let k = knots.partition_point(|p| p.0 <= x);
    let (x0, y0) = knots[k - 1];
    let (x1, y1) = knots[k];
    if x == x0 {
        return y0;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Ordinary least squares fit of the static three-factor curve.
pub fn fit_static_ns(tenors: &[f64], yields: &[f64], lambda: f64) -> Result<[f64; 3]> {
    if tenors.len() != yields.len() {
        return dim("tenor and yield counts differ");
    }
    if tenors.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "static fit needs 3 tenors, got {}",
            tenors.len()
        )));
    }
    let m = tenors.len();
    let mut design = DMatrix::zeros(m, 3);
    for (i, &tau) in tenors.iter().enumerate() {
        let row = loading_row(tau, lambda)?;
        for j in 0..3 {
            design[(i, j)] = row[j];
        }
    }
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::Numerical(
            "rank-deficient static Nelson-Siegel design".into(),
        ));
    }
    let y = DVector::from_column_slice(yields);
    let beta = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok([beta[0], beta[1], beta[2]])
}

/// Per-date static fits over each date's recorded tenors.
pub fn static_factor_series(panel: &YieldPanel, lambda: f64) -> Result<Vec<[f64; 3]>> {
    let tenors = panel.grid.tenors();
    (0..panel.n_dates())
        .map(|r| {
            let (ts, ys): (Vec<f64>, Vec<f64>) = (0..panel.n_tenors())
                .filter(|&c| panel.mask[(r, c)])
                .map(|c| (tenors[c], panel.values[(r, c)]))
                .unzip();
            fit_static_ns(&ts, &ys, lambda)
        })
        .collect()
}

/// Maps a panel onto `target`, carrying recorded values through for tenors
/// present in the source grid and synthesising the rest from a per-date
/// static Nelson-Siegel fit.
pub fn match_maturities(panel: &YieldPanel, target: &MaturityGrid, lambda: f64) -> Result<YieldPanel> {
    let factors = static_factor_series(panel, lambda)?;
    let t = panel.n_dates();
    let n = target.len();
    let mut values = DMatrix::zeros(t, n);
    let source_pos: Vec<Option<usize>> =
        target.tenors().iter().map(|&tau| panel.grid.position(tau)).collect();
    let rows: Vec<[f64; 3]> = target
        .tenors()
        .iter()
        .map(|&tau| loading_row(tau, lambda))
        .collect::<Result<_>>()?;
    for r in 0..t {
        for c in 0..n {
            values[(r, c)] = match source_pos[c] {
                Some(s) if panel.mask[(r, s)] => panel.values[(r, s)],
                _ => {
                    let f = &factors[r];
                    rows[c][0] * f[0] + rows[c][1] * f[1] + rows[c][2] * f[2]
                }
            };
        }
    }
    YieldPanel::complete(panel.dates.clone(), values, target.clone())
}

//! Run configuration: a flat `key = value` file, overridden by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dnsfr_core::estimation::{FitOptions, GammaChoice};
use dnsfr_core::kpca::GammaGrid;
use dnsfr_core::market_data::Month;
use dnsfr_core::portfolio::LadderConfig;
use dnsfr_core::state_space::CovKind;
use dnsfr_core::Execution;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Dns,
    Dnsfr,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Dns => "dns",
            Model::Dnsfr => "dnsfr",
        }
    }
}

/// Every recognised key with its default; `None` means "no default".
const KEYS: &[(&str, Option<&str>)] = &[
    ("reference", None),
    ("response", None),
    ("market", None),
    ("model", Some("dnsfr")),
    ("cov", Some("2")),
    ("q", Some("3")),
    ("lambda", Some("0.0609")),
    ("gamma_lo", Some("0.001")),
    ("gamma_hi", Some("1")),
    ("gamma_step", Some("0.001")),
    ("horizon", Some("12")),
    ("seed", None),
    ("starts", Some("5")),
    ("max_evals", Some("50000")),
    ("tol", Some("1e-8")),
    ("in_sample_end", None),
    ("cases", Some("all")),
    ("band_samples", Some("1000")),
    ("level", Some("0.95")),
    ("refit_response", Some("true")),
    ("paths", Some("1000")),
    ("initial_wealth", Some("12000000")),
    ("investments", Some("13")),
    ("monthly_spend", Some("1000000")),
    ("bond_tenor", Some("12")),
    ("face_value_gbp", Some("100")),
    ("window", Some("60")),
    ("window_gamma", Some("search")),
    ("exec", Some("parallel")),
];

/// Resolved settings. `values` keeps the textual form used for hashing and
/// manifests.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub values: BTreeMap<String, String>,
    pub out: PathBuf,
    pub force: bool,
}

fn bad(key: &str, value: &str, why: &str) -> CliError {
    CliError::Config(format!("{key} = {value}: {why}"))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_flat(text: &str, origin: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{}: expected key = value", origin.display(), i + 1))
        })?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

/// Reads a flat config file, or the `config` object of a run manifest.
pub fn load_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    if text.trim_start().starts_with('{') {
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let obj = v
            .get("config")
            .and_then(|c| c.as_object())
            .ok_or_else(|| CliError::Config(format!("{}: manifest has no config object", path.display())))?;
        return obj
            .iter()
            .map(|(k, v)| match v.as_str() {
                Some(s) => Ok((k.clone(), s.to_string())),
                None => Err(CliError::Config(format!("{}: config value for {k} is not a string", path.display()))),
            })
            .collect();
    }
    parse_flat(&text, path)
}

impl RunConfig {
    pub fn resolve(file: BTreeMap<String, String>, flags: BTreeMap<String, String>, out: PathBuf, force: bool) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (k, d) in KEYS {
            if let Some(d) = d {
                values.insert(k.to_string(), d.to_string());
            }
        }
        for (k, v) in file.into_iter().chain(flags) {
            if k == "out" {
                continue;
            }
            if !KEYS.iter().any(|(name, _)| *name == k) {
                return Err(CliError::Config(format!("unknown key {k}")));
            }
            values.insert(k, v);
        }
        let cfg = RunConfig { values, out, force };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.model()?;
        self.cov()?;
        self.fit_options()?;
        self.gamma_grid()?;
        self.ladder()?;
        self.exec()?;
        self.in_sample_end()?;
        self.window_gamma()?;
        if !(self.float("lambda")? > 0.0) {
            return Err(bad("lambda", self.raw("lambda").unwrap_or(""), "must be positive"));
        }
        if self.uint("horizon")? == 0 {
            return Err(bad("horizon", "0", "must be at least 1"));
        }
        self.float("level")?;
        self.uint("band_samples")?;
        self.uint("paths")?;
        self.uint("window")?;
        self.boolean("refit_response")?;
        self.seed()?;
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn float(&self, key: &str) -> Result<f64, CliError> {
        let v = self.raw(key).ok_or_else(|| CliError::Config(format!("{key} is required")))?;
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| bad(key, v, "not a finite number"))
    }

    pub fn uint(&self, key: &str) -> Result<usize, CliError> {
        let v = self.raw(key).ok_or_else(|| CliError::Config(format!("{key} is required")))?;
        v.parse().map_err(|_| bad(key, v, "not a non-negative integer"))
    }

    fn boolean(&self, key: &str) -> Result<bool, CliError> {
        let v = self.raw(key).unwrap_or("false");
        v.parse().map_err(|_| bad(key, v, "expected true or false"))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.raw(key)
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Config(format!("{key} is required for this command")))
    }

    pub fn model(&self) -> Result<Model, CliError> {
        match self.raw("model") {
            Some("dns") => Ok(Model::Dns),
            Some("dnsfr") => Ok(Model::Dnsfr),
            v => Err(bad("model", v.unwrap_or(""), "expected dns or dnsfr")),
        }
    }

    pub fn cov(&self) -> Result<CovKind, CliError> {
        let v = self.raw("cov").unwrap_or("");
        v.parse::<u8>()
            .ok()
            .and_then(|i| CovKind::from_index(i).ok())
            .ok_or_else(|| bad("cov", v, "expected 1, 2 or 3"))
    }

    pub fn q(&self) -> Result<usize, CliError> {
        self.uint("q")
    }

    /// Regression factors actually used by the selected model.
    pub fn model_q(&self) -> Result<usize, CliError> {
        Ok(match self.model()? {
            Model::Dns => 0,
            Model::Dnsfr => {
                let q = self.q()?;
                if q == 0 {
                    return Err(bad("q", "0", "dnsfr needs at least one factor"));
                }
                q
            }
        })
    }

    pub fn lambda(&self) -> Result<f64, CliError> {
        self.float("lambda")
    }

    pub fn horizon(&self) -> Result<usize, CliError> {
        self.uint("horizon")
    }

    pub fn seed(&self) -> Result<Option<u64>, CliError> {
        match self.raw("seed") {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| bad("seed", v, "not an unsigned integer")),
        }
    }

    /// Fills in a seed from the clock when none was given, so the manifest
    /// records the one actually used.
    pub fn ensure_seed(&mut self) -> Result<u64, CliError> {
        if let Some(s) = self.seed()? {
            return Ok(s);
        }
        let nanos = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        let s = dnsfr_core::exec::derive_seed(nanos, std::process::id() as u64);
        self.values.insert("seed".into(), s.to_string());
        Ok(s)
    }

    pub fn exec(&self) -> Result<Execution, CliError> {
        match self.raw("exec") {
            Some("parallel") => Ok(Execution::Parallel),
            Some("sequential") => Ok(Execution::Sequential),
            v => Err(bad("exec", v.unwrap_or(""), "expected parallel or sequential")),
        }
    }

    pub fn in_sample_end(&self) -> Result<Option<Month>, CliError> {
        match self.raw("in_sample_end") {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| bad("in_sample_end", v, "expected YYYY-MM")),
        }
    }

    pub fn fit_options(&self) -> Result<FitOptions, CliError> {
        let starts = self.uint("starts")?;
        if starts == 0 {
            return Err(bad("starts", "0", "need at least one start"));
        }
        Ok(FitOptions {
            starts,
            max_evals: self.uint("max_evals")?,
            tol: self.float("tol")?,
            seed: self.seed()?.unwrap_or(0),
            exec: self.exec()?,
            ..FitOptions::default()
        })
    }

    pub fn gamma_grid(&self) -> Result<GammaGrid, CliError> {
        let g = GammaGrid {
            lo: self.float("gamma_lo")?,
            hi: self.float("gamma_hi")?,
            step: self.float("gamma_step")?,
        };
        g.points().map_err(|e| CliError::Config(format!("gamma grid: {e}")))?;
        Ok(g)
    }

    pub fn window_gamma(&self) -> Result<GammaChoice, CliError> {
        match self.raw("window_gamma") {
            Some("search") | None => Ok(GammaChoice::Search(self.gamma_grid()?)),
            Some(v) => v
                .parse::<f64>()
                .ok()
                .filter(|g| *g > 0.0)
                .map(GammaChoice::Fixed)
                .ok_or_else(|| bad("window_gamma", v, "expected search or a positive number")),
        }
    }

    pub fn ladder(&self) -> Result<LadderConfig, CliError> {
        let c = LadderConfig {
            initial_wealth: self.float("initial_wealth")?,
            investments: self.uint("investments")?,
            monthly_spend: self.float("monthly_spend")?,
            bond_tenor: self.uint("bond_tenor")?,
            face_value_gbp: self.float("face_value_gbp")?,
        };
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn refit_response(&self) -> Result<bool, CliError> {
        self.boolean("refit_response")
    }

    /// Canonical text of the resolved settings.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

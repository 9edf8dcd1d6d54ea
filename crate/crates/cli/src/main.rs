//! `dnsfr`: prepare panels, fit, forecast, stress-test and simulate bond
//! ladders from the command line.

mod commands;
mod config;
mod error;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{load_file, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "dnsfr", version, about = "Dynamic Nelson-Siegel functional-regression yield models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align raw CSVs to the canonical maturity grid and fill holes.
    Prepare(Common),
    /// Estimate a DNS or DNS-FR model on the prepared panels.
    Fit(Common),
    /// Forecast from a stored fit.
    Forecast(Common),
    /// Run shock scenarios on the reference panel.
    Stress(Common),
    /// Simulate the bond-ladder portfolio over a forecast.
    Ladder(Common),
    /// Rolling-window in- and out-of-sample comparison.
    Window(Common),
}

#[derive(Args, Debug, Default)]
#[command(args_override_self = true)]
struct Common {
    /// Flat `key = value` file, or a run manifest to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overwrite existing outputs whose contents differ.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// dns or dnsfr
    #[arg(long)]
    model: Option<String>,
    /// Measurement covariance structure: 1, 2 or 3.
    #[arg(long)]
    cov: Option<u8>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Comma-separated stress cases, e.g. 1.4,2.4
    #[arg(long)]
    cases: Option<String>,
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    max_evals: Option<usize>,
    /// Last in-sample month, YYYY-MM.
    #[arg(long)]
    in_sample_end: Option<String>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    response: Option<PathBuf>,
    #[arg(long)]
    market: Option<PathBuf>,
    #[arg(long)]
    paths: Option<usize>,
    /// parallel or sequential
    #[arg(long)]
    exec: Option<String>,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let file = match &self.config {
            Some(p) => load_file(p)?,
            None => BTreeMap::new(),
        };
        let mut flags = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                flags.insert(k.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        put("seed", self.seed.map(|v| v.to_string()));
        put("model", self.model.clone());
        put("cov", self.cov.map(|v| v.to_string()));
        put("q", self.q.map(|v| v.to_string()));
        put("lambda", self.lambda.map(|v| v.to_string()));
        put("horizon", self.horizon.map(|v| v.to_string()));
        put("cases", self.cases.clone());
        put("starts", self.starts.map(|v| v.to_string()));
        put("max_evals", self.max_evals.map(|v| v.to_string()));
        put("in_sample_end", self.in_sample_end.clone());
        put("reference", path(&self.reference));
        put("response", path(&self.response));
        put("market", path(&self.market));
        put("paths", self.paths.map(|v| v.to_string()));
        put("exec", self.exec.clone());
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv}")))?;
            flags.insert(k.trim().replace('-', "_"), v.trim().to_string());
        }
        RunConfig::resolve(file, flags, self.out.clone(), self.force)
    }
}

fn run(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Prepare(c) => commands::prepare(&c.resolve()?),
        Command::Fit(c) => commands::fit(&mut c.resolve()?),
        Command::Forecast(c) => commands::forecast(&c.resolve()?),
        Command::Stress(c) => commands::stress(&mut c.resolve()?),
        Command::Ladder(c) => commands::ladder(&mut c.resolve()?),
        Command::Window(c) => commands::window(&mut c.resolve()?),
    }
}

fn name(command: &Command) -> &'static str {
    match command {
        Command::Prepare(_) => "prepare",
        Command::Fit(_) => "fit",
        Command::Forecast(_) => "forecast",
        Command::Stress(_) => "stress",
        Command::Ladder(_) => "ladder",
        Command::Window(_) => "window",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let report = serde_json::json!({
                "error": { "command": null, "kind": "usage", "message": e.to_string().trim_end() }
            });
            eprintln!("{report}");
            return ExitCode::from(2);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json(name(&cli.command)));
            ExitCode::FAILURE
        }
    }
}

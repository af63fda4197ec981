//! Command-line front end: synthesize, filter, analyze and simulate.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pulsecorr_core::Error;

mod analyze;
pub mod config;
mod filter;
mod output;
mod simulate;
mod synth;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "pulsecorr", version, about = "Pulse intensity correlations and decoy-state key rates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic pulse train and its setting sequence.
    Synth(Common),
    /// Denoise a measured trace pulse by pulse.
    Filter(InputArgs),
    /// Per-pattern energy statistics and intensity ratios.
    Analyze(InputArgs),
    /// Asymptotic key rate versus distance.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Correlation order.
    #[arg(long)]
    pub xi: Option<usize>,
    /// Failure probability of the confidence intervals.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Overrides one configuration key, e.g. `--set channel.eta_det=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    pub set: Vec<(String, String)>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trace, energy list or pattern table.
    #[arg(long)]
    pub input: PathBuf,
    /// Known setting sequence, one letter per pulse.
    #[arg(long)]
    pub settings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// `A`, `B`, a pattern table (e.g. from `analyze`) or a saved model.
    #[arg(long)]
    pub model: Option<String>,
}

fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Failure classes, one per exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        if e.is_numerical() {
            Failure::Numerical(msg)
        } else if matches!(e, Error::InvalidParameter { .. }) {
            Failure::Usage(msg)
        } else {
            Failure::Data(msg)
        }
    }
}

impl Common {
    /// Loads the config file and layers the dedicated flags and `--set`
    /// assignments over it. `section` names where `--xi` and `--delta` land.
    fn config(&self, section: &str) -> Result<RunConfig, Failure> {
        let mut overrides = Vec::new();
        if let Some(s) = self.seed {
            overrides.push(("synth.seed".to_string(), s.to_string()));
        }
        if let Some(x) = self.xi {
            overrides.push((format!("{section}.xi"), x.to_string()));
        }
        if let Some(d) = self.delta {
            overrides.push(("analyze.delta".to_string(), d.to_string()));
        }
        overrides.extend(self.set.iter().cloned());
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth(c) => synth::run(&c, &c.config("synth")?),
        Command::Filter(a) => filter::run(&a, &a.common.config("filter")?),
        Command::Analyze(a) => analyze::run(&a, &a.common.config("analyze")?),
        Command::Simulate(a) => simulate::run(&a, &a.common.config("model")?),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.exit_code()
        }
    }
}

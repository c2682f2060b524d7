//! `diffreg` subcommands.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O or file
//! format failure, 4 numerical failure. Settings resolve as defaults, then
//! `--config`, then `--set`, then dedicated flags.

mod eval;
mod generate;
mod inspect;
mod register;
mod sweep;
mod train;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{Config, DenoiserKind};
use crate::error::{CliError, Result};

pub use eval::EvalArgs;
pub use generate::GenerateArgs;
pub use inspect::InspectArgs;
pub use register::RegisterArgs;
pub use sweep::SweepArgs;
pub use train::TrainArgs;

/// Name of the file holding wall-clock timings, which are excluded from
/// determinism guarantees.
pub const TIMING_FILE: &str = "timing.json";

#[derive(Debug, Parser)]
#[command(name = "diffreg", version, about = "Point cloud registration by diffusion in matching-matrix space")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML experiment config.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Config override, e.g. `--set generator.n_points=64` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for the command (scene generator, sampler, optimiser or experiment master seed).
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// More log output (-v info, -vv debug) unless DIFFREG_LOG is set.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene bundle.
    Generate(GenerateArgs),
    /// Register the two clouds of a bundle.
    Register(RegisterArgs),
    /// Train the attention denoiser on a directory of bundles.
    Train(TrainArgs),
    /// Score stored predictions against a bundle.
    Eval(EvalArgs),
    /// Run seeded experiments over a parameter grid.
    Sweep(SweepArgs),
    /// Print statistics of a serialised matching matrix.
    Inspect(InspectArgs),
}

impl CommonArgs {
    /// Defaults, config file and `--set` overrides, in that order.
    pub fn resolve(&self) -> Result<Config> {
        if let Some(p) = &self.config {
            require_file(p, "config file")?;
        }
        Config::load(self.config.as_deref())?.with_overrides(&self.overrides)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate::run(&cli.common, a),
        Command::Register(a) => register::run(&cli.common, a),
        Command::Train(a) => train::run(&cli.common, a),
        Command::Eval(a) => eval::run(&cli.common, a),
        Command::Sweep(a) => sweep::run(&cli.common, a),
        Command::Inspect(a) => inspect::run(&cli.common, a),
    }
}

pub(crate) fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

pub(crate) fn require_bundle(path: &Path) -> Result<()> {
    if crate::io::bundle::is_bundle(path) {
        Ok(())
    } else {
        Err(CliError::Usage(format!("not a scene bundle (no gt.json): {}", path.display())))
    }
}

/// Applies `--denoiser analytic|trained:PATH`.
pub(crate) fn apply_denoiser_flag(cfg: &mut Config, flag: Option<&str>) -> Result<()> {
    match flag {
        None => {}
        Some("analytic") => {
            cfg.denoiser.kind = DenoiserKind::Analytic;
            cfg.denoiser.path = None;
        }
        Some(s) => match s.strip_prefix("trained:") {
            Some(path) if !path.is_empty() => {
                cfg.denoiser.kind = DenoiserKind::Trained;
                cfg.denoiser.path = Some(PathBuf::from(path));
            }
            _ => return Err(CliError::Usage(format!("--denoiser must be `analytic` or `trained:PATH`, got `{s}`"))),
        },
    }
    if let (DenoiserKind::Trained, Some(path)) = (cfg.denoiser.kind, &cfg.denoiser.path) {
        require_file(path, "trained parameter archive")?;
    }
    Ok(())
}

/// Comma-separated list of step counts.
pub(crate) fn parse_steps(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| CliError::Usage(format!("bad step count `{v}` in `{s}`"))))
        .collect()
}

#[derive(Debug, Serialize)]
pub(crate) struct TimingFile<T: Serialize> {
    pub timing: T,
}

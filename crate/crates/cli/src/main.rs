//! `tslab`: reproducible experiment runner for Thompson sampling on linear-Gaussian bandits.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("malformed config: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Core(#[from] tslab_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_owned(), source }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tslab", version, about = "Thompson sampling experiments: regret curves, bounds, elliptical potentials")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Flat `key = value` config file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    replicates: Option<usize>,
    #[arg(long, global = true, value_name = "T")]
    horizon: Option<usize>,
    /// Output directory for results.csv, report.json and plot.svg.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Also write plot.svg.
    #[arg(long, global = true)]
    plot: bool,
    /// Override any config key, e.g. `--set d=4`; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Thompson,
    Uniform,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo Bayesian regret curve with upper and lower bound envelopes.
    Simulate {
        #[arg(long, value_enum, default_value = "thompson")]
        policy: PolicyArg,
    },
    /// Evaluate every closed-form bound and constant.
    Bounds,
    /// Fuzz the generalized elliptical potential bound.
    EllipticalCheck {
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Lower bounds against the Monte Carlo regret.
    Lowerbound,
    /// Thompson sampling with MALA posterior draws under log-concave noise.
    Logconcave {
        #[arg(long)]
        mala_steps: Option<usize>,
        #[arg(long)]
        mala_step_size: Option<f64>,
        #[arg(long, value_name = "gauss|smoothed-laplace")]
        noise: Option<String>,
    },
    /// Burn-in versus late-window regret across prior scales.
    Decouple {
        /// Comma-separated multipliers of Σ0.
        #[arg(long)]
        scales: Option<String>,
    },
}

fn load_config(common: &CommonArgs, command: &Command) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let mut set = |k: &str, v: Option<String>| v.map_or(Ok(()), |v| cfg.set(k, &v));
    set("seed", common.seed.map(|v| v.to_string()))?;
    set("replicates", common.replicates.map(|v| v.to_string()))?;
    set("horizon", common.horizon.map(|v| v.to_string()))?;
    match command {
        Command::EllipticalCheck { instances } => set("instances", instances.map(|v| v.to_string()))?,
        Command::Logconcave {
            mala_steps,
            mala_step_size,
            noise,
        } => {
            set("mala_steps", mala_steps.map(|v| v.to_string()))?;
            set("mala_step_size", mala_step_size.map(|v| format!("{v:?}")))?;
            set("noise", noise.clone())?;
        }
        Command::Decouple { scales } => set("scales", scales.clone())?,
        _ => {}
    }
    Ok(cfg)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("TSLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("TSLAB_THREADS must be a positive integer, got `{raw}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size worker pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> Result<bool, CliError> {
    configure_threads()?;
    let cfg = load_config(&cli.common, &cli.command)?;
    std::fs::create_dir_all(&cli.common.out).map_err(|e| CliError::io(&cli.common.out, e))?;
    let ctx = commands::Context {
        cfg,
        out: cli.common.out,
        plot: cli.common.plot,
    };
    let outcome = match cli.command {
        Command::Simulate { policy } => commands::simulate(&ctx, policy)?,
        Command::Bounds => commands::bounds(&ctx)?,
        Command::EllipticalCheck { .. } => commands::elliptical_check(&ctx)?,
        Command::Lowerbound => commands::lowerbound(&ctx)?,
        Command::Logconcave { .. } => commands::logconcave(&ctx)?,
        Command::Decouple { .. } => commands::decouple(&ctx)?,
    };
    for (name, ok) in &outcome.checks {
        if !ok {
            eprintln!("check failed: {name}");
        }
    }
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("tslab: {e}");
            ExitCode::from(1)
        }
    }
}

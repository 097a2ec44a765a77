//! `endemic`: fit, forecast, compare, simulate and check endemic-epidemic
//! count models from a TOML run configuration.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};

use endemic::eval::ResidualScale;
use endemic::ErrorCategory;

use config::{CompareConfig, RunConfig, ScoreFile};

/// Invalid or inconsistent configuration.
#[derive(Debug, thiserror::Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

/// A fit or forecast finished without converging.
#[derive(Debug, thiserror::Error)]
#[error("convergence failure: {0}")]
pub struct ConvergenceError(pub String);

#[derive(Parser)]
#[command(
    name = "endemic",
    version,
    about = "Endemic-epidemic count models with serial-interval lags"
)]
struct Cli {
    /// Worker threads for fits and simulation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the configured model; optionally select the lag order first.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Exit successfully even when the optimizer did not converge.
        #[arg(long)]
        allow_nonconverged: bool,
    },
    /// Rolling-origin forecasts scored with the log score.
    Forecast {
        #[command(flatten)]
        common: Common,
    },
    /// Compare score files against a baseline with permutation tests.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Score file as LABEL=PATH; repeatable, replaces configured files.
        #[arg(long = "scores", value_name = "LABEL=PATH")]
        scores: Vec<String>,
        /// Label of the reference model.
        #[arg(long)]
        baseline: Option<String>,
        /// Random sign flips per test (default 9999).
        #[arg(long)]
        n_perm: Option<usize>,
        /// Comma-separated horizons (default: all shared horizons).
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
    },
    /// Simulate a counts panel from given coefficients.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Pearson residuals and their autocorrelation.
    Residuals {
        #[command(flatten)]
        common: Common,
        /// Use this fit report instead of fitting.
        #[arg(long)]
        fit: Option<PathBuf>,
        /// Divide by the conditional variance instead of its square root.
        #[arg(long)]
        variance: bool,
        #[arg(long)]
        max_lag: Option<usize>,
    },
}

fn load_config(common: &Common, required: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None if required => return Err(anyhow!(ConfigError("--config is required".into()))),
        None => RunConfig::default(),
    };
    let out = common.out.as_ref().map(|o| absolute(o)).transpose()?;
    if common.config.is_none() {
        cfg.out_dir = absolute(&cfg.out_dir)?;
    }
    cfg.resolve(common.seed, out);
    Ok(cfg)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(config::normalize(&std::path::absolute(p)?))
}

fn parse_score_arg(s: &str) -> Result<ScoreFile> {
    let (label, path) = s
        .split_once('=')
        .ok_or_else(|| anyhow!(ConfigError(format!("expected LABEL=PATH, got {s:?}"))))?;
    Ok(ScoreFile {
        label: label.to_string(),
        path: absolute(Path::new(path))?,
    })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(anyhow!(ConfigError("--workers must be at least 1".into())));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Fit {
            common,
            allow_nonconverged,
        } => {
            let cfg = load_config(&common, true)?;
            let fit = commands::fit(&cfg, allow_nonconverged)?;
            print!("{}", commands::summary(&fit));
        }
        Command::Forecast { common } => {
            let cfg = load_config(&common, true)?;
            print!("{}", commands::forecast(&cfg)?);
        }
        Command::Compare {
            common,
            scores,
            baseline,
            n_perm,
            horizons,
        } => {
            let mut cfg = load_config(&common, false)?;
            let mut cc = cfg.compare.clone().unwrap_or(CompareConfig {
                baseline: String::new(),
                n_perm: 9999,
                horizons: None,
                scores: Vec::new(),
            });
            if !scores.is_empty() {
                cc.scores = scores
                    .iter()
                    .map(|s| parse_score_arg(s))
                    .collect::<Result<_>>()?;
            }
            if let Some(b) = baseline {
                cc.baseline = b;
            }
            if let Some(n) = n_perm {
                cc.n_perm = n;
            }
            if horizons.is_some() {
                cc.horizons = horizons;
            }
            if cc.baseline.is_empty() {
                return Err(anyhow!(ConfigError("no baseline given".into())));
            }
            cfg.compare = Some(cc.clone());
            print!("{}", commands::compare(&cfg, &cc)?);
        }
        Command::Simulate { common } => {
            let cfg = load_config(&common, true)?;
            let panel = commands::simulate(&cfg)?;
            println!(
                "simulated {} weeks x {} units into {}",
                panel.n_weeks(),
                panel.n_units(),
                cfg.out_dir.join("counts.csv").display()
            );
        }
        Command::Residuals {
            common,
            fit,
            variance,
            max_lag,
        } => {
            let mut cfg = load_config(&common, true)?;
            if variance {
                cfg.residuals.scale = ResidualScale::Variance;
            }
            if let Some(l) = max_lag {
                cfg.residuals.max_lag = l;
            }
            let fit = fit.map(|p| absolute(&p)).transpose()?;
            print!("{}", commands::residuals(&cfg, fit.as_deref())?);
        }
    }
    Ok(())
}

/// Exit status: 2 config, 3 data, 4 convergence, 5 I/O, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<ConvergenceError>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<endemic::Error>() {
            return match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Convergence => 4,
                ErrorCategory::Io => 5,
            };
        }
        if cause.is::<std::io::Error>() {
            return 5;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

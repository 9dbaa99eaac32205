use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{CalibrationTarget, Config};

#[derive(Debug, Parser)]
#[command(name = "smallloss", version, about = "Random-order online learning experiments")]
struct Cli {
    /// TOML or JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for seed-parallel runs (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate (u, ε_min(u), φ★(u)) over a log grid.
    Conjugate {
        #[arg(long, allow_hyphen_values = true)]
        u_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        u_max: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Run the conversion on an instance family across seeds and ε arms.
    Simulate,
    /// Single-deletion sensitivity audit of an oracle's sampling distribution.
    Sensitivity,
    /// Lower-bound constructions: Rademacher floor or the mistake tree.
    Lowerbound,
    /// Search for the smallest sampling constant meeting a success threshold.
    Calibrate {
        #[arg(long, value_enum)]
        target: Option<CalibrationTarget>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Audit(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<smallloss::Error> for CliError {
    fn from(e: smallloss::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

/// Settings shared by every command after flags and config are merged.
pub struct Ctx {
    pub config: Config,
    pub out: PathBuf,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Runtime(e.into()))?;
    let mut ctx = Ctx { config, out: cli.out };
    pool.install(|| match cli.command {
        Command::Conjugate { u_min, u_max, points } => {
            let c = &mut ctx.config.conjugate;
            c.u_min = u_min.unwrap_or(c.u_min);
            c.u_max = u_max.unwrap_or(c.u_max);
            c.points = points.unwrap_or(c.points);
            commands::conjugate::run(&ctx)
        }
        Command::Simulate => commands::simulate::run(&ctx),
        Command::Sensitivity => commands::sensitivity::run(&ctx),
        Command::Lowerbound => commands::lowerbound::run(&ctx),
        Command::Calibrate { target, threshold } => {
            let c = &mut ctx.config.calibrate;
            c.target = target.or(c.target);
            c.threshold = threshold.unwrap_or(c.threshold);
            commands::calibrate::run(&ctx)
        }
    })
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
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Audit(msg)) => {
            eprintln!("audit failed: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

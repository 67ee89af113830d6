mod commands;
mod config;
mod output;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pca_debias::EstimatorKind;
use serde_json::json;

use commands::{EstimateArgs, Options};
use config::{parse_config, Format, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
            CliError::Io(_) => "io",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (CliError::Config(m) | CliError::Runtime(m) | CliError::Io(m)) = self;
        f.write_str(m)
    }
}

#[derive(Debug, Parser)]
#[command(name = "pca-debias", version, about = "Simulate, estimate and bound linear functionals of principal components")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every scenario's master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads for replicates.
    #[arg(long, global = true, env = "PCA_DEBIAS_JOBS")]
    jobs: Option<usize>,
    /// Suppress progress and warnings on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every scenario of the config.
    Simulate {
        /// Also write per-replicate records here.
        #[arg(long)]
        replicates: Option<PathBuf>,
    },
    /// Estimate <theta_r, u> from a headerless CSV of observations.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        r: usize,
        /// `e<k>` or comma-separated coordinates.
        #[arg(long)]
        u: String,
        #[arg(long, default_value_t = pca_debias::cluster::DEFAULT_TAU)]
        tau: f64,
        /// Split block size; the default rule when absent.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, value_enum, default_value = "debiased")]
        estimator: Estimator,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Sweep the tail dimension of each scenario's model.
    BiasCurve,
    /// Evaluate the van Trees bound at each scenario's model.
    Lowerbound,
    /// Run the invariant suite.
    Selftest,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Estimator {
    Plugin,
    Debiased,
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig, CliError> {
    let path = path.ok_or_else(|| CliError::Config("this command needs --config <path>".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn set_jobs(jobs: Option<usize>) -> Result<(), CliError> {
    match jobs {
        Some(0) => Err(CliError::Config("jobs must be at least 1".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot start thread pool: {e}"))),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match cli.command {
        Command::Simulate { .. } | Command::BiasCurve | Command::Lowerbound => Some(load_config(cli.config.as_ref())?),
        _ => None,
    };
    let opts = Options {
        out: cli.out.clone().or_else(|| cfg.as_ref().and_then(|c| c.out.clone())),
        format: cli.format.or_else(|| cfg.as_ref().and_then(|c| c.format)).unwrap_or_default(),
        seed: cli.seed,
        quiet: cli.quiet || cfg.as_ref().is_some_and(|c| c.quiet),
    };
    set_jobs(cli.jobs.or_else(|| cfg.as_ref().and_then(|c| c.jobs)))?;
    match cli.command {
        Command::Simulate { replicates } => commands::simulate(cfg.as_ref().unwrap(), &opts, replicates.as_deref()),
        Command::BiasCurve => commands::bias_curve(cfg.as_ref().unwrap(), &opts),
        Command::Lowerbound => commands::lowerbound(cfg.as_ref().unwrap(), &opts),
        Command::Estimate {
            data,
            r,
            u,
            tau,
            m,
            estimator,
            alpha,
        } => commands::estimate(
            &EstimateArgs {
                data,
                r,
                u,
                tau,
                m,
                estimator: match estimator {
                    Estimator::Plugin => EstimatorKind::Plugin,
                    Estimator::Debiased => EstimatorKind::Debiased,
                },
                alpha,
            },
            &opts,
        ),
        Command::Selftest => {
            let checks = selftest::run();
            let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.check).collect();
            let text = output::render(opts.format, &json!({"command": "selftest", "checks": checks}), || {
                let mut t = output::Table::new(vec!["check", "pass", "detail"]);
                for c in &checks {
                    t.push_record(&serde_json::to_value(c).unwrap());
                }
                t
            });
            output::emit(&text, opts.out.as_deref())?;
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Runtime(format!("self-test checks failed: {}", failed.join(", "))))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "code": e.code(), "message": e.to_string()}}));
            ExitCode::from(e.code())
        }
    }
}

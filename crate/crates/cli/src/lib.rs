//! Command-line front end: `plan`, `run`, `learn`, `verify` and `compare`.
//!
//! Exit codes: 0 success, 2 configuration or admissibility error, 3 numerical
//! failure, 4 verification failure.

pub mod commands;
pub mod config;

use clap::{Parser, Subcommand};
use commands::{exit, CliError};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "precond-langevin",
    version,
    about = "Preconditioned Langevin sampling with explicit budgets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML config file (schema_version = 1).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Master seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true, value_name = "K", env = "PRECOND_LANGEVIN_THREADS")]
    pub threads: Option<usize>,

    /// Config override, e.g. `--set sampler.eps=0.2`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Target, e.g. `gaussian:d=2,kappa=4` or `logcosh:d=3,spread=4`.
    #[arg(long, global = true, value_name = "SPEC")]
    pub target: Option<String>,

    /// Sampling mode: unpre, cov or fisher.
    #[arg(long, global = true, value_name = "MODE")]
    pub mode: Option<String>,

    /// Kernel family: ula or underdamped.
    #[arg(long, global = true, value_name = "FAMILY")]
    pub family: Option<String>,

    /// Accuracy eps of each output.
    #[arg(long, global = true, value_name = "EPS")]
    pub eps: Option<f64>,

    /// Number of output states.
    #[arg(long = "N", global = true, value_name = "N")]
    pub n: Option<usize>,

    /// Learning failure probability.
    #[arg(long, global = true, value_name = "DELTA")]
    pub delta: Option<f64>,

    /// Learning relative tolerance.
    #[arg(long, global = true, value_name = "TOL")]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Print the schedule, checked inequalities and FLOP forecast.
    Plan,
    /// Run the sampler and write the ensemble.
    Run,
    /// Learn and certify a preconditioner.
    Learn,
    /// Check the schedule against the exact Gaussian oracle.
    Verify,
    /// Compare planned FLOPs of all modes across ensemble sizes.
    Compare,
}

fn build_config(cli: &Cli) -> Result<config::Config, CliError> {
    use toml::Value;
    let mut table = config::load_table(cli.config.as_deref()).map_err(CliError::config)?;
    for assignment in &cli.set {
        config::apply_set(&mut table, assignment).map_err(CliError::config)?;
    }
    let mut put = |key: &str, value: Value| config::set_path(&mut table, key, value).map_err(CliError::config);
    if let Some(v) = &cli.target {
        put("target", Value::String(v.clone()))?;
    }
    if let Some(v) = &cli.mode {
        put("sampler.mode", Value::String(v.clone()))?;
    }
    if let Some(v) = &cli.family {
        put("sampler.family", Value::String(v.clone()))?;
    }
    if let Some(v) = cli.eps {
        put("sampler.eps", Value::Float(v))?;
    }
    if let Some(v) = cli.n {
        put("sampler.n", Value::Integer(v as i64))?;
    }
    if let Some(v) = cli.delta {
        put("learn.delta", Value::Float(v))?;
    }
    if let Some(v) = cli.tol {
        put("learn.tol", Value::Float(v))?;
    }
    if let Some(v) = cli.seed {
        // TOML integers are signed 64-bit.
        let value = i64::try_from(v)
            .map(Value::Integer)
            .map_err(|_| CliError::config("--seed must be below 2^63"))?;
        put("seed", value)?;
    }
    if let Some(v) = &cli.out {
        put("out", Value::String(v.display().to_string()))?;
    }
    if let Some(v) = cli.threads {
        put("threads", Value::Integer(v as i64))?;
    }
    config::finish(table).map_err(CliError::config)
}

/// Run the CLI on `args` (including the program name) and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    let result = build_config(&cli).and_then(|cfg| {
        if let Some(k) = cfg.threads {
            precond_langevin::par::configure_threads(k);
        }
        match cli.command {
            Command::Plan => commands::plan(&cfg),
            Command::Run => commands::run(&cfg),
            Command::Learn => commands::learn(&cfg),
            Command::Verify => commands::verify(&cfg),
            Command::Compare => commands::compare(&cfg),
        }
    });
    match result {
        Ok(text) => {
            print!("{text}");
            exit::OK
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

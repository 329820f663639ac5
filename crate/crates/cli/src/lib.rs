//! `wc4dvar` experiment runner.
//!
//! ```text
//! wc4dvar run|spectrum|sweep --config PATH [--set section.key=value ...] --out DIR
//! wc4dvar plot --input CSV [--input CSV ...] [--log] --out DIR|FILE.svg
//! ```
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration or input,
//! 3 numerical failure, 4 dense-assembly cap exceeded. `WC4DVAR_THREADS`
//! caps the number of worker threads.

pub mod commands;
pub mod config;
pub mod csv;
pub mod error;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use wc4dvar::Execution;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "wc4dvar", version, about = "Weak-constraint 4D-Var preconditioning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the compared inner loop under every preconditioner and sketch seed.
    Run(ExperimentArgs),
    /// Dense eigenvalues of the Hessian with and without each preconditioner.
    Spectrum(ExperimentArgs),
    /// Repeat `run` along one configuration axis.
    Sweep(ExperimentArgs),
    /// Render CSV output as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration value, e.g. `--set precond.k=5,10`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for `--set precond.methods=...`.
    #[arg(long)]
    precond: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Output directory, or a path ending in `.svg`.
    #[arg(long)]
    out: PathBuf,
    /// Logarithmic y axis.
    #[arg(long)]
    log: bool,
    /// Plot this column instead of the default one.
    #[arg(long)]
    y: Option<String>,
    #[arg(long)]
    title: Option<String>,
    /// Accepted for symmetry with the other commands; not used.
    #[arg(long, hide = true)]
    config: Option<PathBuf>,
}

/// Worker count from `WC4DVAR_THREADS`, if set.
pub fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var("WC4DVAR_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("WC4DVAR_THREADS must be a positive integer, got '{v}'"))),
        },
    }
}

fn execution() -> CliResult<Execution> {
    if let Some(n) = thread_cap()? {
        // Fails only if the pool already exists, which leaves it as it was.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        if n == 1 {
            return Ok(Execution::Serial);
        }
    }
    Ok(Execution::Parallel)
}

fn load(args: &ExperimentArgs) -> CliResult<ExperimentConfig> {
    let mut overrides = args.set.clone();
    if let Some(p) = &args.precond {
        overrides.push(format!("precond.methods={p}"));
    }
    ExperimentConfig::load(&args.config, &overrides)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run(a) => commands::run(&load(&a)?, &a.out, execution()?),
        Command::Spectrum(a) => commands::spectrum(&load(&a)?, &a.out, execution()?),
        Command::Sweep(a) => commands::sweep(&load(&a)?, &a.out, execution()?),
        Command::Plot(a) => {
            let opts = plot::PlotOptions {
                log_y: a.log,
                y_column: a.y,
                title: a.title,
            };
            let path = plot::plot(&a.inputs, &a.out, &opts)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

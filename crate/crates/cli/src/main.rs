use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod manifest;

/// Misuse of the command line (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "hyperlista", version, about = "Instance-adaptive unrolled sparse recovery toolkit")]
struct Cli {
    /// Worker threads (default: all cores; 1 runs fully serial).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file with defaults for the subcommand's flags (flags win).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dictionary and sparse instances.
    Gen(commands::GenArgs),
    /// Solve for the symmetric weight and write a setup file.
    Dict(commands::DictArgs),
    /// Grid-search (c1, c2, c3).
    Search(commands::SearchArgs),
    /// Run an evaluation suite with frozen hyperparameters.
    Eval(commands::EvalArgs),
    /// Convergence experiment with the conjugate-gradient finish.
    Superlinear(commands::SuperlinearArgs),
    /// Per-layer dump for a single instance.
    Trace(commands::TraceArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let cfg = cli.config.as_deref();
    match &cli.command {
        Command::Gen(a) => commands::gen(&config::merge(a, cfg)?),
        Command::Dict(a) => commands::dict(&config::merge(a, cfg)?),
        Command::Search(a) => commands::search(&config::merge(a, cfg)?),
        Command::Eval(a) => commands::eval(&config::merge(a, cfg)?),
        Command::Superlinear(a) => commands::superlinear(&config::merge(a, cfg)?),
        Command::Trace(a) => commands::trace(&config::merge(a, cfg)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

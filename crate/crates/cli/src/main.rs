use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecbound_cli::run::{configure_threads, plan, write_atomic};
use ecbound_cli::{load_config, run_command, Command, RunError, RunOptions};

#[derive(Parser)]
#[command(name = "ecbound", version, about = "Error-exponent and threshold bounds on the erasure channel")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exponent lower bound E_G on the epsilon grid.
    Exponent(Args),
    /// ML threshold lower bound delta*.
    Threshold(Args),
    /// Finite-length union bound on the block error probability.
    FiniteBound(Args),
    /// Monte Carlo ML decoding.
    Simulate(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path (stdout when absent and the config sets none).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Validate the config and print the plan without computing.
    #[arg(long)]
    dry_run: bool,
    /// Add an independent-method comparison to the output.
    #[arg(long)]
    cross_check: bool,
}

fn execute(cmd: Command, args: Args) -> Result<(), RunError> {
    let mut cfg = load_config(&args.config).map_err(|e| RunError::Config(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        if seed > i64::MAX as u64 {
            return Err(RunError::Config(format!("--seed {seed} exceeds {}", i64::MAX)));
        }
        cfg.seed = seed;
    }
    let mut opts = RunOptions {
        cross_check: args.cross_check,
        timestamp: None,
    };
    if args.dry_run {
        print!("{}", plan(cmd, &cfg, &opts)?);
        return Ok(());
    }
    configure_threads()?;
    opts.timestamp = Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    let csv = run_command(cmd, &cfg, &opts)?;
    match args.out.as_ref().or(cfg.output.as_ref()) {
        Some(path) => write_atomic(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Exponent(a) => (Command::Exponent, a),
        Cmd::Threshold(a) => (Command::Threshold, a),
        Cmd::FiniteBound(a) => (Command::FiniteBound, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
    };
    match execute(cmd, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ecbound: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

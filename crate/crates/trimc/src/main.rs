use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use trimc::cli::{self, Command};

/// Variational Monte Carlo for bosons with a three-body hard core:
/// scattering-solution verification, quadrature references, energy
/// estimation and density sweeps.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    /// verify | integrals | energy | oracle | sweep
    #[arg(value_parser = parse_command)]
    command: Command,
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_command(s: &str) -> Result<Command, String> {
    match s {
        "verify" => Ok(Command::Verify),
        "integrals" => Ok(Command::Integrals),
        "energy" => Ok(Command::Energy),
        "oracle" => Ok(Command::Oracle),
        "sweep" => Ok(Command::Sweep),
        other => Err(format!("unknown subcommand {other}; use verify | integrals | energy | oracle | sweep")),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(threads) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("cannot size the worker pool: {e}");
            return ExitCode::from(cli::EXIT_NUMERICAL as u8);
        }
    }
    let mut cfg = match cli::load_config(&args.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    match cli::run(args.command, &cfg, &args.out) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

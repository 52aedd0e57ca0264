use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use glbranch_cli::{run, Mode, RunConfig};
use log::{error, info};

/// Bifurcation branches and thresholds of discrete Ginzburg-Landau fields.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap for grid sweeps.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();

    let mut config = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }

    match run(&config, args.workers) {
        Ok(manifest) => {
            info!(
                "done in {:.1}s; manifest in {}",
                manifest.wall_clock_seconds,
                manifest.output_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}

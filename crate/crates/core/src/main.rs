use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use spdelab::harness::{output_dir, run_experiment, Experiment, ExperimentConfig};

/// Numerical experiments for pathwise stochastic conservation laws.
#[derive(Parser)]
#[command(name = "spdelab", version)]
struct Cli {
    experiment: Experiment,
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, default: logical cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; `SPDELAB_OUT` takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match ExperimentConfig::from_file(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("spdelab: {e}");
            return ExitCode::from(2);
        }
    };
    let seed = cli.seed.unwrap_or(cfg.master_seed);
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let out = output_dir(cli.out, &cfg);
    match run_experiment(cli.experiment, &cfg, seed, workers, &out) {
        Ok(rec) => {
            println!("{} {:?} config={} wall={:.2}s", rec.experiment, rec.status, &rec.config_hash[..16], rec.wall_time);
            for w in &rec.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::from(rec.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("spdelab: {e}");
            ExitCode::from(2)
        }
    }
}

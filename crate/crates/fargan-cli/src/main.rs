use clap::{Parser, Subcommand};
use fargan_cli::commands::{cmd_prop1, cmd_props, cmd_report, cmd_train};
use std::path::PathBuf;
use std::process::ExitCode;

/// Experiment runner: train GAN variants on synthetic 2-D datasets and
/// verify the penalty / fake-as-real analysis numerically.
#[derive(Parser)]
#[command(name = "fargan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run training per seed and emit trace CSV, metric snapshots, sample
    /// CSV and a scatter SVG under --out.
    Train {
        /// JSON run configuration ({"dataset": ..., "train": ...}).
        #[arg(long)]
        config: PathBuf,
        /// Output directory; must not already hold a manifest.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seed list overriding the config seed.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Sweep the proposition solvers plus the brute-force oracle over a
    /// grid and check the monotonicity claims.
    Props {
        /// Grid spec like "m0=1,2,4,8,16;k=0.1,1,10,100;lambda=0,1,1e6".
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the constructed separating discriminator on a seeded
    /// unit-circle dataset and check its outputs and objective.
    Prop1 {
        #[arg(long, default_value_t = 0.2)]
        eps: f64,
        /// Hidden-layer sharpness constant (k1 = k2).
        #[arg(long, default_value_t = 1e4)]
        sharpness: f64,
        /// Dataset spec like "n=32,m=32,seed=7".
        #[arg(long)]
        dataset: Option<String>,
        /// Optional JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate metric snapshots from train runs into one summary CSV.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config, out, seeds } => cmd_train(config, out, seeds.as_deref()),
        Command::Props { grid, out } => cmd_props(grid.as_deref(), out),
        Command::Prop1 {
            eps,
            sharpness,
            dataset,
            out,
        } => cmd_prop1(*eps, *sharpness, dataset.as_deref(), out.as_deref()),
        Command::Report { runs, out } => cmd_report(runs, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

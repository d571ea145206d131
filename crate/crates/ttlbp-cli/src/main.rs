use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ttlbp_cli::commands::{
    cmd_convert, cmd_estimate, cmd_gradcheck, cmd_sweep, cmd_train, ConvertArgs, EstimateArgs,
    GradcheckArgs, SweepArgs, TrainArgs,
};
use ttlbp_cli::CliResult;

/// Truncated local training for spiking networks: train, check gradients,
/// estimate cost, sweep the design space, convert event recordings.
#[derive(Parser)]
#[command(name = "ttlbp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write metrics, checkpoint, and firing rates.
    Train {
        /// Architecture JSON.
        #[arg(long)]
        arch: PathBuf,
        /// Dataset manifest JSON.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Partial train-config JSON (flags override it).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        /// Truncation interval length.
        #[arg(long)]
        k: Option<usize>,
        /// Trainable layers per local block.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Classifier mode: trainable | random.
        #[arg(long)]
        classifier: Option<String>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        time_steps: Option<usize>,
    },
    /// Check the backward recursions against the brute-force oracle.
    Gradcheck {
        /// Optional toy architecture JSON (defaults to the built-in suite).
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for gradcheck.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytical cost table over a (k, n) grid.
    EstimateCost {
        #[arg(long)]
        arch: PathBuf,
        /// Comma-separated truncation lengths, e.g. 20,10,5,2,1.
        #[arg(long)]
        k: String,
        /// Comma-separated block lengths, e.g. 4,2,1.
        #[arg(long)]
        n: String,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 20)]
        time_steps: usize,
        /// Uniform sparsity value or path to harvested firing rates.
        #[arg(long)]
        sparsity: Option<String>,
        /// trainable | random | both.
        #[arg(long, default_value = "both")]
        classifier: String,
        /// Accuracy table JSON for figure-of-merit columns.
        #[arg(long)]
        accuracy: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every (k, n) cell, join with cost ratios, rank by merit.
    Sweep {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        k: String,
        #[arg(long)]
        n: String,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "trainable")]
        classifier: String,
    },
    /// Convert an event CSV into binary two-channel frames.
    ConvertDvs {
        /// Event CSV with header t_us,x,y,p.
        #[arg(long)]
        events_in: PathBuf,
        /// Accumulation window in milliseconds.
        #[arg(long)]
        dt_ms: f64,
        /// Number of frames to keep.
        #[arg(long)]
        t: usize,
        /// Sensor size as HxW, e.g. 128x128.
        #[arg(long, default_value = "128x128")]
        sensor: String,
        /// Label recorded in the output manifest.
        #[arg(long, default_value_t = 0)]
        label: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            arch,
            data,
            out,
            config,
            epochs,
            k,
            n,
            seed,
            classifier,
            batch_size,
            lr,
            momentum,
            dropout,
            time_steps,
        } => cmd_train(&TrainArgs {
            arch,
            data,
            out,
            config,
            epochs,
            k,
            n,
            seed,
            classifier,
            batch_size,
            learning_rate: lr,
            momentum,
            dropout,
            time_steps,
        }),
        Command::Gradcheck { arch, seed, out } => cmd_gradcheck(&GradcheckArgs { arch, seed, out }),
        Command::EstimateCost {
            arch,
            k,
            n,
            batch_size,
            time_steps,
            sparsity,
            classifier,
            accuracy,
            out,
        } => cmd_estimate(&EstimateArgs {
            arch,
            k_list: k,
            n_list: n,
            batch_size,
            time_steps,
            sparsity,
            classifier,
            accuracy,
            out,
        }),
        Command::Sweep {
            arch,
            data,
            out,
            config,
            k,
            n,
            epochs,
            seed,
            classifier,
        } => cmd_sweep(&SweepArgs {
            arch,
            data,
            out,
            config,
            k_list: k,
            n_list: n,
            epochs,
            seed,
            classifier,
        }),
        Command::ConvertDvs {
            events_in,
            dt_ms,
            t,
            sensor,
            label,
            out,
        } => cmd_convert(&ConvertArgs {
            events_in,
            dt_ms,
            t_steps: t,
            sensor,
            label,
            out,
        }),
    }
}

fn main() -> ExitCode {
    // TTLBP_THREADS caps the worker pool; results are identical for any
    // thread count.
    if let Ok(value) = std::env::var("TTLBP_THREADS") {
        match value.parse::<usize>() {
            Ok(threads) if threads >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
            _ => {
                eprintln!("usage error: TTLBP_THREADS must be a positive integer, got '{value}'");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

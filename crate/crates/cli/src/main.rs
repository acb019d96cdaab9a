//! `wakd`: generate data, run distillation sweeps, average checkpoints and
//! summarize results.
//!
//! Exit codes: 0 on success, 1 on configuration or input errors, 2 when a
//! sweep finished but some cells failed.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "wakd", version, about = "Knowledge distillation with trajectory weight averaging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train teachers, distill students and score every strategy.
    Run {
        /// JSON experiment config; every field is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides `output_dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Run independent (target, seed) cells on all cores.
        #[arg(long)]
        parallel_cells: bool,
    },
    /// Select or average checkpoints of one stored trajectory.
    Average {
        /// Checkpoint directory (`<run>/student/ckpt`).
        #[arg(long)]
        ckpt_dir: PathBuf,
        /// One of erm, swad, sma, wakd.
        #[arg(long)]
        strategy: String,
        /// Validation log; required for erm, swad and sma, unused by wakd.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Averaged checkpoint to write; the JSON sidecar goes next to it.
        #[arg(long)]
        out: PathBuf,
        /// Fraction of training skipped before averaging (sma, wakd).
        #[arg(long, conflicts_with = "swad")]
        start_frac: Option<f64>,
        /// SWAD hyperparameters as `n_s,n_e,r`.
        #[arg(long)]
        swad: Option<String>,
        /// Total training iterations; defaults to the last stored checkpoint.
        #[arg(long)]
        total_iterations: Option<u64>,
        /// Validation examples in dataset CSV form (sma only).
        #[arg(long)]
        val_data: Option<PathBuf>,
        /// Student architecture JSON (sma only).
        #[arg(long)]
        arch: Option<PathBuf>,
    },
    /// Aggregate results files into a mean ± sd table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        results: Vec<PathBuf>,
        /// Where to write the summary CSV.
        #[arg(long, default_value = "summary.csv")]
        summary: PathBuf,
    },
    /// Export a generated multi-domain dataset as CSV.
    GenerateData {
        /// Generator spec JSON; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WAKD_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            parallel_cells,
        } => commands::run(config.as_deref(), out, seeds, parallel_cells),
        Command::Average {
            ckpt_dir,
            strategy,
            trajectory,
            out,
            start_frac,
            swad,
            total_iterations,
            val_data,
            arch,
        } => commands::average(commands::AverageArgs {
            ckpt_dir,
            strategy,
            trajectory,
            out,
            start_frac,
            swad,
            total_iterations,
            val_data,
            arch,
        }),
        Command::Report { results, summary } => commands::report(&results, &summary),
        Command::GenerateData { spec, out } => commands::generate_data(spec.as_deref(), &out),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

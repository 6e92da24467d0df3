//! `pcari`: canonicalization, dataset generation, training, evaluation and
//! frame analyses from the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pcari::canonical::CanonicalError;
use pcari::eigen3::EigenError;
use pcari::train::TrainError;

#[derive(Debug, Parser)]
#[command(
    name = "pcari",
    version,
    about = "Rotation-invariant point cloud representation from PCA frames"
)]
struct Cli {
    /// Print machine-readable JSON on stdout instead of a table.
    #[arg(long, global = true)]
    json: bool,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "PCARI_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrameChoice {
    /// The base frame only.
    Base,
    /// All eight sign variants, written with suffixes `_s0` to `_s7`.
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Express a cloud (xyz text or a sampled OFF mesh) in its intrinsic frame.
    Canonicalize {
        input: std::path::PathBuf,
        #[arg(short, long)]
        output: std::path::PathBuf,
        #[arg(long, value_enum, default_value = "base")]
        frame: FrameChoice,
        /// Samples drawn from an OFF mesh; ignored for xyz input.
        #[arg(long, default_value_t = 2048)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic labelled dataset as a JSON-lines manifest.
    Gen {
        #[arg(short, long)]
        output: std::path::PathBuf,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 512)]
        points: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Train from a config file and write the checkpoint and reports.
    Train {
        config: std::path::PathBuf,
        /// Output directory, created if missing.
        #[arg(long, default_value = "run")]
        out: std::path::PathBuf,
    },
    /// Score a checkpoint under a rotation protocol.
    Eval {
        #[arg(long)]
        checkpoint: std::path::PathBuf,
        /// One of z/z, so3/so3, z/so3 (case-insensitive).
        #[arg(long)]
        protocol: String,
        /// Test manifest; defaults to the synthetic test set of the checkpoint's config.
        #[arg(long)]
        data: Option<std::path::PathBuf>,
        /// Seed for the per-example test rotations; defaults to the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<std::path::PathBuf>,
    },
    /// Eigenvalue ratio histograms over a manifest or a directory of clouds.
    Stats {
        dataset: std::path::PathBuf,
        /// Samples per OFF mesh.
        #[arg(long, default_value_t = 2048)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<std::path::PathBuf>,
    },
    /// Frame stability under resampling for every OFF mesh in a directory.
    Stability {
        mesh_dir: std::path::PathBuf,
        #[arg(long, default_value_t = 2048)]
        points: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<std::path::PathBuf>,
    },
}

/// Marks an error as a command-line misuse rather than bad data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<EigenError>()
            || matches!(
                cause.downcast_ref::<CanonicalError>(),
                Some(CanonicalError::Eigen(_))
            )
            || matches!(
                cause.downcast_ref::<TrainError>(),
                Some(TrainError::Diverged { .. })
            )
        {
            return 3;
        }
    }
    2
}

fn init_logging() {
    let filter = std::env::var("PCARI_LOG")
        .or_else(|_| std::env::var("RUST_LOG"))
        .unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new()
        .parse_filters(&filter)
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("thread count must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let json = cli.json;
    match cli.command {
        Command::Canonicalize {
            input,
            output,
            frame,
            points,
            seed,
        } => commands::canonicalize(&input, &output, frame, points, seed, json),
        Command::Gen {
            output,
            per_class,
            points,
            seed,
        } => commands::generate(&output, per_class, points, seed, json),
        Command::Train { config, out } => commands::train(&config, &out, json),
        Command::Eval {
            checkpoint,
            protocol,
            data,
            seed,
            out,
        } => commands::eval(
            &checkpoint,
            &protocol,
            data.as_deref(),
            seed,
            out.as_deref(),
            json,
        ),
        Command::Stats {
            dataset,
            points,
            seed,
            out,
        } => commands::stats(&dataset, points, seed, out.as_deref(), json),
        Command::Stability {
            mesh_dir,
            points,
            trials,
            seed,
            out,
        } => commands::stability(&mesh_dir, points, trials, seed, out.as_deref(), json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

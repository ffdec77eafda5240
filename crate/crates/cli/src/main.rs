//! `breathorder`: synthesize data, mask, train, evaluate and plot pairwise
//! temporal-ordering runs from one reproducible configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use breathorder::Error;
use clap::{Parser, Subcommand};

use config::CommonArgs;

#[derive(Debug, Parser)]
#[command(
    name = "breathorder",
    version,
    about = "Pairwise respiratory-state ordering on video clips"
)]
struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset of recovery sequences.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        sequences: usize,
        /// Clips per sequence (at least 3).
        #[arg(long)]
        clips: Option<usize>,
    },
    /// Apply motion-guided masking to a dataset and write previews.
    Mask {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tile size in pixels; defaults to the encoder patch size.
        #[arg(long)]
        tile: Option<usize>,
        /// Clips that get heat-map and overlay previews.
        #[arg(long, default_value_t = 2)]
        previews: usize,
    },
    /// Train one method and write checkpoints and logs.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Evaluate trained runs on their held-out test sequences.
    Eval {
        /// Training output directory; repeat to compare runs.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Dataset override; defaults to the one each run was trained on.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy against clip separation for one run.
    Curve {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of every differentiable operation.
    Gradcheck {
        #[arg(long, value_delimiter = ',', default_values_t = breathorder::gradsuite::DEFAULT_SEEDS)]
        seeds: Vec<u64>,
        /// Also write gradcheck.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a dataset, clip, checkpoint or run directory.
    Inspect { path: PathBuf },
    /// Cut a directory of PNM frames into clips and add it to a dataset.
    Segment {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        fps: f64,
        #[arg(long)]
        video_id: String,
        #[arg(long)]
        participant: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        clip_seconds: Option<f64>,
    },
}

/// 1: configuration, 2: missing artifact, 3: numeric failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<commands::GradcheckFailed>().is_some() {
        return 3;
    }
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::MissingArtifact(_)) | Some(Error::Io { .. }) => 2,
        Some(Error::NonFinite(_)) => 3,
        _ if err.chain().any(|e| e.is::<std::io::Error>()) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    match cli.command {
        Command::Synth {
            common,
            out,
            sequences,
            clips,
        } => commands::synth(&common, &out, sequences, clips),
        Command::Mask {
            common,
            data,
            out,
            tile,
            previews,
        } => commands::mask(&common, &data, &out, tile, previews),
        Command::Train {
            common,
            data,
            out,
            epochs,
            lr,
            batch_size,
        } => commands::train(&common, &data, &out, epochs, lr, batch_size),
        Command::Eval { runs, data, out } => commands::eval(&runs, data.as_deref(), &out),
        Command::Curve { run, data, out } => commands::curve(&run, data.as_deref(), &out),
        Command::Gradcheck { seeds, out } => commands::gradcheck(&seeds, out.as_deref()),
        Command::Inspect { path } => commands::inspect(&path),
        Command::Segment {
            common,
            frames,
            fps,
            video_id,
            participant,
            out,
            clip_seconds,
        } => commands::segment(&common, &frames, fps, &video_id, &participant, &out, clip_seconds),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

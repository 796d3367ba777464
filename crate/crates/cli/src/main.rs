mod dataset;
mod detect;
mod eval;
mod output;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::output::Failure;

#[derive(Parser)]
#[command(name = "smokewatch", version, about = "Smoke early-warning service and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run polling, detection, alerting and the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write an augmented copy of a dataset.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Add a horizontally mirrored copy of every sample.
        #[arg(long)]
        mirror: bool,
        /// Exposure gains, each within [-0.15, 0.15].
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        exposure: Vec<f64>,
    },
    /// Assign train/val/test splits, keeping augmented copies with their source.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        /// Train, val and test sizes, e.g. 2405,228,79.
        #[arg(long, value_delimiter = ',', num_args = 1, required = true)]
        counts: Vec<usize>,
        #[arg(long)]
        seed: u64,
        /// Output manifest; defaults to rewriting the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a predictions CSV against a dataset manifest.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long)]
        out: PathBuf,
        /// Only score samples of this split.
        #[arg(long)]
        split: Option<SplitArg>,
        #[arg(long)]
        json: bool,
    },
    /// Run the detector once on an image file.
    Detect {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendArg::Mock)]
        backend: BackendArg,
        #[arg(long)]
        fixture: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        /// Key for fixture lookup; defaults to the file stem.
        #[arg(long)]
        image_id: Option<String>,
        /// Confidence floor applied before NMS.
        #[arg(long)]
        conf: Option<f64>,
        /// Write a copy of the image with boxes drawn on it.
        #[arg(long)]
        annotate: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    output::init_logging();
    let result = match cli.command {
        Command::Serve { config } => serve::run(&config),
        Command::Augment {
            input,
            out,
            mirror,
            exposure,
        } => dataset::augment(&input, &out, mirror, exposure),
        Command::Split {
            input,
            counts,
            seed,
            out,
        } => dataset::split(&input, &counts, seed, out.as_deref()),
        Command::Eval {
            pred,
            truth,
            iou,
            out,
            split,
            json,
        } => eval::run(&eval::Args {
            pred,
            truth,
            iou,
            out,
            split: split.map(|s| match s {
                SplitArg::Train => smokewatch_core::dataset::Split::Train,
                SplitArg::Val => smokewatch_core::dataset::Split::Val,
                SplitArg::Test => smokewatch_core::dataset::Split::Test,
            }),
            json,
        }),
        Command::Detect {
            image,
            backend,
            fixture,
            endpoint,
            image_id,
            conf,
            annotate,
            json,
        } => detect::run(detect::Args {
            image,
            external: matches!(backend, BackendArg::External),
            fixture,
            endpoint,
            image_id,
            conf,
            annotate,
            json,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            eprintln!("{}: {message}", output::paint("error", output::RED));
            ExitCode::from(code)
        }
    }
}

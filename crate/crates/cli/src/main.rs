//! `kws`: featurize audio, inspect and size architectures, train, detect and
//! benchmark keyword spotting models.
//!
//! Exit status: 0 success, 1 usage error, 2 data or format error, 3 numeric
//! failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "kws", version, about = "Small-footprint keyword spotting toolkit")]
struct Cli {
    /// Output style.
    #[arg(long, value_enum, global = true, default_value_t = Format::Text)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    /// One JSON document on stdout.
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathArg {
    Naive,
    Optimized,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute log-mel features of a WAV file and write a feature dump.
    Featurize {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Left,right context frames to stack around every frame.
        #[arg(long, value_parser = commands::parse_context)]
        context: Option<kws_core::ContextConfig>,
    },
    /// Print the layer-by-layer shape trace of an architecture.
    Describe(ArchArgs),
    /// Parameter and multiply counts, optionally relative to a second architecture.
    Budget {
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long)]
        compare: Option<String>,
    },
    /// Largest feature-map count whose parameter total fits under a cap.
    Fit {
        #[command(flatten)]
        arch: ArchArgs,
        #[arg(long, default_value_t = kws_core::arch::DEFAULT_PARAM_CAP)]
        cap: u64,
    },
    /// Train a model and write it as a .kwsm file.
    Train(TrainArgs),
    /// Run keyword detection over a WAV file.
    Detect {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        threshold: f64,
        #[arg(long, default_value_t = 30)]
        w_smooth: usize,
        #[arg(long, default_value_t = 100)]
        w_max: usize,
        #[arg(long, default_value_t = 30)]
        refractory: usize,
    },
    /// Time the forward pass on random windows after checking both conv paths agree.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        /// Time only this path (both by default).
        #[arg(long, value_enum)]
        path: Option<PathArg>,
        #[arg(long, env = "KWS_SEED", default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    /// Built-in name or path to a JSON architecture file.
    #[arg(long)]
    arch: String,
    /// Output classes, filler included.
    #[arg(long, default_value_t = 4)]
    labels: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "cnn-one")]
    arch: String,
    /// Dataset root laid out as <root>/<class>/<clip>.wav.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Generate a tone-signature dataset with this many keywords.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, env = "KWS_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 0.05)]
    init_scale: f64,
    /// Training windows cut from every clip.
    #[arg(long, default_value_t = kws_core::train::data::WINDOWS_PER_CLIP)]
    windows: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command, cli.format) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numeric(_) => 3,
            CliError::Core(e) => match e.class() {
                kws_core::ErrorClass::Usage => 1,
                kws_core::ErrorClass::Data => 2,
                kws_core::ErrorClass::Numeric => 3,
            },
        }
    }
}

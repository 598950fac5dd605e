//! `elcrf`: train, apply, evaluate and inspect latent-state CRF taggers.
//!
//! Exit codes: 0 on success, 1 on internal failure, 2 on usage or input errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use elcrf::data::synth::ConstraintKind;

use config::HyperFlags;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input: exit 2.
    Usage(String),
    /// Anything else: exit 1.
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<elcrf::Error> for CliError {
    fn from(e: elcrf::Error) -> Self {
        use elcrf::Error::*;
        match e {
            InfeasibleDecode | InfeasibleGold | Dimension(_) => CliError::Internal(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "elcrf", version, about = "Latent-state CRF sequence tagger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for decoding and cross-validation folds.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a labeled CoNLL file.
    Train(TrainArgs),
    /// Append a predicted label column to a CoNLL file.
    Tag(TagArgs),
    /// Score predictions, a model, or a leave-one-out run.
    Eval(EvalArgs),
    /// Generate a synthetic corpus with a planted label constraint.
    Synth(SynthArgs),
    /// Dump the per-state transition embeddings of a model.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Dev set for early stopping and model selection.
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    /// Scored after training when given.
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    /// Where to write the trained model.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Pretrained vectors, one `token v1 ... vd` per line.
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Training log (default: the model path with `.log.tsv` appended).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperFlags,
}

#[derive(Debug, Args)]
pub struct TagArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Input in CoNLL column format; the first column is the token.
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    /// Output file (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Gold CoNLL file.
    #[arg(long, value_name = "FILE", required_unless_present = "loo")]
    pub test: Option<PathBuf>,
    /// Predictions: CoNLL with the predicted label in the last column.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["model", "loo"])]
    pub pred: Option<PathBuf>,
    /// A second prediction file to compare against `--pred`.
    #[arg(long, value_name = "FILE", requires = "pred")]
    pub compare: Option<PathBuf>,
    /// Tag the gold file with this model and score the result.
    #[arg(long, value_name = "FILE", conflicts_with = "loo")]
    pub model: Option<PathBuf>,
    /// Leave-one-document-out cross-validation over `--train`.
    #[arg(long, requires = "train")]
    pub loo: bool,
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Also write the report as key=value lines to this file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// at-most-once, exactly-once, first-occurrence-only or co-occurrence.
    #[arg(long, default_value = "at-most-once")]
    pub kind: ConstraintKind,
    #[arg(long, default_value_t = 500)]
    pub sequences: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Output file (default: stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Tag(a) => commands::tag(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Inspect(a) => commands::inspect(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("elcrf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

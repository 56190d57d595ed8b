use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sarcattn::ReportFormat;

mod commands;
mod config;

use config::RunFlags;

/// Errors split by exit code: bad input or configuration (2) versus
/// failures while doing the work (1).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Parser)]
#[command(
    name = "sarcattn",
    version,
    about = "Self-attention + BiGRU sarcasm detector"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the best checkpoint plus per-epoch metrics
    Train(RunFlags),
    /// Score a labeled dataset with a checkpoint
    Eval(EvalArgs),
    /// Render word-level attention reports
    Explain(ExplainArgs),
    /// Retrain along one axis (layers, heads or embeddings)
    Ablate(AblateArgs),
    /// Write a synthetic cue-word dataset
    GenSynthetic(GenArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Test,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON-lines dataset
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = sarcattn::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Which lines to score, by their `split` field (unmarked lines are train)
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    /// Also write the report JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One sentence
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    pub text: Option<String>,
    /// One sentence per line, or JSON-lines records with a `text` field
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// ansi, html or json
    #[arg(long, default_value = "ansi")]
    pub format: String,
    /// Output file (with --text) or directory (with --file)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the per-layer, per-head attention grid for --text here
    #[arg(long, requires = "text")]
    pub model_view: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunFlags,
    /// Layer counts to sweep, e.g. 0,1,3,5
    #[arg(long, value_delimiter = ',')]
    pub sweep_layers: Option<Vec<usize>>,
    /// Head counts to sweep, e.g. 1,4,8
    #[arg(long, value_delimiter = ',')]
    pub sweep_heads: Option<Vec<usize>>,
    /// Embedding sources to sweep: `random` or file paths
    #[arg(long, value_delimiter = ',')]
    pub sweep_embeddings: Option<Vec<String>>,
}

#[derive(Args)]
pub struct GenArgs {
    /// Output JSON-lines file
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 50)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn parse_format(s: &str) -> Result<ReportFormat, CliError> {
    s.parse()
        .map_err(|e: sarcattn::interpret::ReportError| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Explain(a) => commands::explain(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::GenSynthetic(a) => commands::gen_synthetic(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

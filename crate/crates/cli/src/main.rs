use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowshot::llm::MockBehavior;
use flowshot::select::OrderingStrategy;

mod commands;
mod config;

const LAYOUT_HELP: &str = "\
Output layout (under output_dir from the config):
  dataset/   projected train and eval pools, fine-tuning JSONL
  models/    embedding index, MLP weights
  prompts/   rendered prompt previews
  reports/   report.json, series.csv, per-detector and ordering reports
  review/    reasoning transcripts for manual review

Exit status: 0 success, 1 usage error, 2 runtime error.";

/// Few-shot LLM and MLP classification of network flows as benign or DDoS.
#[derive(Debug, Parser)]
#[command(name = "flowshot", version, after_help = LAYOUT_HELP)]
pub struct Cli {
    /// Run configuration file.
    #[arg(short, long, global = true, default_value = "run.toml")]
    pub config: PathBuf,

    /// Use a deterministic offline backend instead of the configured models:
    /// oracle, adversarial, step:<m> or hash.
    #[arg(long, global = true, value_name = "BEHAVIOR", value_parser = parse_mock)]
    pub mock: Option<MockBehavior>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the flow CSVs, split train and eval pools, write them to dataset/.
    Ingest,
    /// Embedding index over the train pool.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Render prompts without sending them.
    Prompt {
        #[command(subcommand)]
        action: PromptAction,
    },
    /// Run one detector at one n over the evaluation set.
    Detect(DetectArgs),
    /// Accuracy-versus-n sweep over the configured detectors.
    Sweep,
    /// Compare example arrangements for top-k prompts.
    Ordering,
    /// Write prompt/completion JSONL for provider-side fine-tuning.
    FinetuneExport {
        /// Number of pool examples to export (random draw); whole pool if omitted.
        #[arg(long)]
        n: Option<usize>,
    },
    /// MLP baseline on the selected numeric features.
    Baseline {
        #[command(subcommand)]
        action: BaselineAction,
    },
    /// Ask the model to explain evaluation cases, for manual review.
    Reason {
        /// Show the gold label in the prompt and ask for a justification.
        #[arg(long)]
        include_label: bool,
    },
    /// Check and summarize a saved sweep report.
    Report {
        /// Report to read; defaults to reports/report.json.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum IndexAction {
    /// Embed the train pool and write models/index.csv.
    Build,
}

#[derive(Debug, Subcommand)]
pub enum PromptAction {
    /// Print the detection prompt for one evaluation case.
    Preview {
        /// Position of the case in the evaluation set.
        #[arg(long, default_value_t = 0)]
        case: usize,
        /// Number of examples.
        #[arg(short, default_value_t = 3)]
        n: usize,
        #[arg(long, value_enum, default_value_t = Selection::Random)]
        selection: Selection,
        /// Arrangement of top-k examples; defaults to the sweep setting.
        #[arg(long)]
        ordering: Option<OrderingStrategy>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Selection {
    Random,
    TopK,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// llm-random, llm-topk, llm-finetuned, mlp-random or mlp-topk.
    #[arg(long)]
    pub detector: String,
    /// Number of examples (or fine-tuning set size).
    #[arg(short)]
    pub n: usize,
}

#[derive(Debug, Subcommand)]
pub enum BaselineAction {
    /// Train on the train pool and write models/mlp.txt.
    Train {
        /// Train on a random draw of this many pool examples instead.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Score the evaluation set with a saved model.
    Predict {
        /// Model file; defaults to models/mlp.txt.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn parse_mock(s: &str) -> Result<MockBehavior, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("FLOWSHOT_LOG").init();

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

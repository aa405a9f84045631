use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fmtm::analysis::Relevance;
use fmtm::prediction::Predictor;
use fmtm_cli::{AnalyzeOptions, CommandResult, GlobalOptions};

/// Factorized multi-modal topic model.
#[derive(Parser)]
#[command(name = "fmtm", version)]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for document-parallel phases (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Training configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Conditional,
    PriorMean,
}

#[derive(Clone, Copy, ValueEnum)]
enum RelevanceArg {
    Mean,
    Max,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic corpus with its ground truth.
    Generate {
        /// Scenario configuration (JSON); the built-in scenario if omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a corpus.
    Train {
        /// Corpus manifest.
        #[arg(long)]
        corpus: PathBuf,
        /// Output archive; the trace goes to `<out>.trace.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Tie the topic activations across modalities (the mmDILN baseline).
        #[arg(long)]
        tied_xi: bool,
    },
    /// Predict a modality from the others.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Observed modalities, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        observed: Vec<String>,
        #[arg(long)]
        target: String,
        #[arg(long, value_enum, default_value = "conditional")]
        predictor: PredictorArg,
        #[arg(long, default_value_t = 10)]
        top_words: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perplexity reports for one or more models.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        model: Vec<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shared and private topics of a trained model.
    Analyze {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        target: Option<String>,
        /// Correlations below this magnitude are ignored.
        #[arg(long, default_value_t = fmtm::analysis::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, value_enum, default_value = "mean")]
        relevance: RelevanceArg,
        #[arg(long, default_value_t = 10)]
        top_words: usize,
        /// Corpus providing the term names.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<CommandResult> {
    let global = GlobalOptions { seed: cli.seed, workers: cli.workers, config: cli.config };
    match cli.command {
        Command::Generate { scenario, out } => fmtm_cli::cmd_generate(scenario.as_deref(), &out, &global),
        Command::Train { corpus, out, tied_xi } => fmtm_cli::cmd_train(&corpus, &out, tied_xi, &global),
        Command::Predict { model, corpus, observed, target, predictor, top_words, out } => {
            let predictor = match predictor {
                PredictorArg::Conditional => Predictor::Conditional,
                PredictorArg::PriorMean => Predictor::PriorMean,
            };
            fmtm_cli::cmd_predict(&model, &corpus, &observed, &target, predictor, top_words, &out, &global)
        }
        Command::Evaluate { model, corpus, out } => fmtm_cli::cmd_evaluate(&model, &corpus, &out, &global),
        Command::Analyze { model, out, source, target, threshold, relevance, top_words, corpus } => {
            let opts = AnalyzeOptions {
                source,
                target,
                threshold,
                relevance: match relevance {
                    RelevanceArg::Mean => Relevance::Mean,
                    RelevanceArg::Max => Relevance::Max,
                },
                top_words,
                corpus,
            };
            fmtm_cli::cmd_analyze(&model, &out, &opts)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(result) => {
            let mut summary = result.summary;
            summary["artifacts"] = serde_json::json!(result.artifacts);
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! `docrel`: vocabulary training, dataset building, model training,
//! prediction, evaluation and ensembling.
//!
//! Exit codes: 0 success, 2 bad arguments or configuration, 3 data or I/O
//! errors, 4 numeric failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use docrel::ErrorKind;

#[derive(Parser, Debug)]
#[command(
    name = "docrel",
    version,
    about = "Document-level relation extraction pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run configuration: a preset, then a TOML file, then `key=value`
/// overrides, then `--seed`.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Named hyperparameter set (cdr, cdr+data, cpr, ctd, standard-adam, synthetic).
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML file with configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set learning_rate=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a sub-word (or word) vocabulary from raw text.
    BpeTrain(commands::BpeTrainArgs),
    /// Build a distantly supervised dataset from curated relations and tagged abstracts.
    BuildCtd(commands::BuildCtdArgs),
    /// Label entity pairs of gold-annotated PubTator splits.
    PreprocessCdr(commands::PreprocessCdrArgs),
    /// Train a model and tune decision thresholds on dev.
    Train(commands::TrainArgs),
    /// Score every entity pair of a document set with a trained model.
    Predict(commands::PredictArgs),
    /// Score predictions against gold labels, optionally by mention distance.
    Evaluate(commands::EvaluateArgs),
    /// Average prediction sets and re-tune thresholds on averaged dev predictions.
    Ensemble(commands::EnsembleArgs),
    /// Compare analytic and finite-difference gradients of the full objective.
    GradCheck(commands::GradCheckArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BpeTrain(a) => commands::bpe_train(&a, &argv),
        Command::BuildCtd(a) => commands::build_ctd(&a, &argv),
        Command::PreprocessCdr(a) => commands::preprocess_cdr(&a, &argv),
        Command::Train(a) => commands::train(&a, &argv),
        Command::Predict(a) => commands::predict(&a, &argv),
        Command::Evaluate(a) => commands::evaluate(&a, &argv),
        Command::Ensemble(a) => commands::ensemble(&a, &argv),
        Command::GradCheck(a) => commands::grad_check(&a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}

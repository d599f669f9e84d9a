use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "tacalign", version, about = "Tactile contact-state dataset, alignment training and grasp refinement")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags win over `--set`, which wins
/// over the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// key = value file with command parameters
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one parameter, as key=value (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing non-empty output
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate contacts and write a dataset directory
    Generate,
    /// Train the tactile encoder against frozen text and image embeddings
    Train(TrainArgs),
    /// Zero-shot classification of a held-out split
    #[command(name = "eval-zeroshot")]
    EvalZeroShot(EvalArgs),
    /// Probe heads on frozen encoder features
    #[command(name = "eval-probe")]
    EvalProbe(EvalArgs),
    /// Compare analytic and finite-difference gradients
    Gradcheck,
    /// Run the closed-loop grasp refinement demo
    #[command(name = "grasp-demo")]
    GraspDemo(GraspArgs),
}

#[derive(Args, Clone, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output checkpoint path
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Embedding store to use instead of the synthetic space
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Train with the text alignment term only
    #[arg(long)]
    pub no_image_loss: bool,
    /// Start from this checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Use each sample's own text embedding as the tactile embedding
    #[arg(long)]
    pub oracle_encoder: bool,
}

#[derive(Args, Clone, Debug, Default)]
pub struct GraspArgs {
    /// `random` or `fig6`
    #[arg(long)]
    pub scenario: Option<String>,
    /// External reasoner command line, spoken to over stdin/stdout
    #[arg(long)]
    pub reasoner: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let common = cli.common;
    let result = match cli.command {
        Command::Generate => commands::generate(&common),
        Command::Train(a) => commands::train(&common, &a),
        Command::EvalZeroShot(a) => commands::eval_zeroshot(&common, &a),
        Command::EvalProbe(a) => commands::eval_probe(&common, &a),
        Command::Gradcheck => commands::gradcheck(&common),
        Command::GraspDemo(a) => commands::grasp_demo(&common, &a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

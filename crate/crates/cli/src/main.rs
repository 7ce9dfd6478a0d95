mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::{CliError, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "klassify", version, about = "Deepfake detection and temporal localization from handcrafted lip features")]
struct Cli {
    /// JSON pipeline config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-video commands (default 1, or KLASSIFY_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print per-input diagnostics to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the 16-channel feature file of one clip.
    Extract(commands::extract::ExtractArgs),
    /// Train the video classifier.
    Train(TrainArgs),
    /// Train the segment localizer.
    TrainLocalizer(TrainLocalizerArgs),
    /// Score feature files with a classifier.
    Infer(commands::infer::InferArgs),
    /// Predict fake segments with a localizer.
    Localize(commands::infer::LocalizeArgs),
    /// Fit Platt parameters on labeled scores.
    Calibrate(commands::calibrate::CalibrateArgs),
    /// Calibrate and max-out audio and video scores.
    Fuse(commands::calibrate::FuseArgs),
    /// Generate a synthetic corpus.
    Synth(commands::synth::SynthArgs),
    /// Compute AUC, AP, AR and the combined score.
    Evaluate(commands::evaluate::EvaluateArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: commands::train::TrainFlags,
}

#[derive(Debug, Args)]
struct TrainLocalizerArgs {
    #[command(flatten)]
    common: commands::train::TrainFlags,
    /// Classifier model whose trunk initializes the localizer.
    #[arg(long)]
    init: Option<PathBuf>,
}

pub struct Globals {
    pub config: config::PipelineConfig,
    pub threads: Option<usize>,
    pub verbose: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = Globals {
        config: config::PipelineConfig::load(cli.config.as_deref())?,
        threads: cli.threads,
        verbose: cli.verbose,
    };
    match cli.command {
        Command::Extract(a) => commands::extract::run(&g, a),
        Command::Train(a) => commands::train::run(&g, a.common, false, None),
        Command::TrainLocalizer(a) => commands::train::run(&g, a.common, true, a.init),
        Command::Infer(a) => commands::infer::run_infer(&g, a),
        Command::Localize(a) => commands::infer::run_localize(&g, a),
        Command::Calibrate(a) => commands::calibrate::run_calibrate(&g, a),
        Command::Fuse(a) => commands::calibrate::run_fuse(&g, a),
        Command::Synth(a) => commands::synth::run(&g, a),
        Command::Evaluate(a) => commands::evaluate::run(&g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

//! The `mammocolor` command line: data preparation, training, evaluation,
//! observer-study planning and analysis, and the study server.
//!
//! Every command accepts a JSON config (`--config`) whose keys mirror the
//! long flags in snake_case; flags win over file values. Commands that write
//! files put everything under `--output-dir` together with a
//! `run-manifest.json` recording versions, seed, options and SHA-256 digests
//! of inputs and outputs.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use clap::{Parser, Subcommand};

use commands::{data, evaluate, model, selftest, study};
pub use config::GlobalArgs;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "mammocolor", version, about = "Task-driven chromatic encoding for mammography triage")]
pub struct Cli {
    #[command(flatten)]
    pub globals: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic patient-grouped dataset (PNG views plus manifest).
    Synth(data::SynthArgs),
    /// Background removal, ROI crop and resize/pad/normalize of every view.
    Preprocess(data::PreprocessArgs),
    /// Patient-level train/validation/test split of a manifest.
    Split(data::SplitArgs),
    /// Train the TDCE or grayscale-baseline regime.
    Train(model::TrainArgs),
    /// Write TDCE, fixed-colormap and channel-replicated renderings.
    Encode(model::EncodeArgs),
    /// View- and breast-level scores for a manifest.
    Predict(model::PredictArgs),
    /// Paired comparison of two prediction files (AUC, operating point, DeLong, McNemar).
    Evaluate(evaluate::EvaluateArgs),
    /// Density or lesion-type subgroup table for two prediction files.
    Subgroup(evaluate::SubgroupArgs),
    /// Observer-study planning, export and analysis.
    #[command(subcommand)]
    Study(study::StudyCommand),
    /// Run the observer-study HTTP service.
    Serve(study::ServeArgs),
    /// Gradient checks and statistics oracles.
    Selftest(selftest::SelftestArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.globals.threads {
        if n == 0 {
            return error::invalid("--threads must be positive");
        }
        // Ignored if a pool already exists (tests running in one process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let g = &cli.globals;
    match &cli.command {
        Command::Synth(a) => data::synth(g, a),
        Command::Preprocess(a) => data::preprocess(g, a),
        Command::Split(a) => data::split(g, a),
        Command::Train(a) => model::train(g, a),
        Command::Encode(a) => model::encode(g, a),
        Command::Predict(a) => model::predict(g, a),
        Command::Evaluate(a) => evaluate::evaluate(g, a),
        Command::Subgroup(a) => evaluate::subgroup(g, a),
        Command::Study(c) => study::run(g, c),
        Command::Serve(a) => study::serve(g, a),
        Command::Selftest(a) => selftest::run(g, a),
    }
}

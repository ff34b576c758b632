//! Command-line frontend: toy-data generation, training, evaluation,
//! gradient checks and weight-map visualization.

pub mod commands;
pub mod config;
pub mod pgm;

use clap::{Parser, Subcommand};

use salatt_core::error::Result;

#[derive(Debug, Parser)]
#[command(
    name = "salatt",
    about = "Saliency pre-selection + element-wise-multiplication attention VQA models",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset, feature file and config
    GenToy(commands::GenToyArgs),
    /// Train a model variant and write checkpoint + metrics log
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on a dataset
    Eval(commands::EvalArgs),
    /// Verify gradients against central finite differences
    Gradcheck(commands::GradcheckArgs),
    /// Emit pre-selection and attention weight maps for one sample
    Visualize(commands::VisualizeArgs),
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenToy(args) => commands::cmd_gen_toy(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Gradcheck(args) => commands::cmd_gradcheck(args),
        Command::Visualize(args) => commands::cmd_visualize(args),
    }
}

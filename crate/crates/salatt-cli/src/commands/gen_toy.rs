//! `salatt gen-toy`: write a synthetic dataset, its feature file and a
//! desk-scale config ready for `salatt train`.

use std::path::PathBuf;

use clap::Args;

use salatt_core::error::Result;
use salatt_core::region::{write_features, RegionGrid};
use salatt_core::train::{build_toy_task, majority_baseline, ToyTaskSpec, TOY_QUESTION_VOCAB};

use crate::config::RunConfig;

#[derive(Debug, Args)]
pub struct GenToyArgs {
    /// Output directory for features.bin, train.tsv, val.tsv and toy.config
    #[arg(long, default_value = "toy-data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Number of pattern prototypes
    #[arg(long, default_value_t = 4)]
    pub patterns: usize,
    /// Number of question templates (1 or 2)
    #[arg(long, default_value_t = 2)]
    pub questions: usize,
    /// Gaussian noise scale on every feature entry
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 2000)]
    pub train_samples: usize,
    #[arg(long, default_value_t = 200)]
    pub val_samples: usize,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
}

/// Desk-scale training profile written into the generated config.
fn toy_run_config(args: &GenToyArgs, answer_count: usize) -> RunConfig {
    RunConfig {
        seed: args.seed,
        feature_dim: args.feature_dim,
        embed_dim: 12,
        question_layers: 1,
        question_hidden: 12,
        common_dim: 24,
        vocab_size: TOY_QUESTION_VOCAB,
        answer_count,
        dropout_rate: 0.0,
        batch_size: 32,
        eval_every: 100,
        patience: 500,
        max_iterations: 2000,
        features: Some(PathBuf::from("features.bin")),
        train_data: Some(PathBuf::from("train.tsv")),
        val_data: Some(PathBuf::from("val.tsv")),
        ..RunConfig::default()
    }
}

pub fn cmd_gen_toy(args: &GenToyArgs) -> Result<()> {
    let spec = ToyTaskSpec {
        grid: RegionGrid::new(4, 2, 1)?,
        feature_dim: args.feature_dim,
        patterns: args.patterns,
        templates: args.questions,
        noise_sigma: args.noise,
        train_samples: args.train_samples,
        val_samples: args.val_samples,
    };
    let task = build_toy_task(&spec, args.seed)?;
    std::fs::create_dir_all(&args.out)?;

    write_features(&args.out.join("features.bin"), &task.features)?;
    task.train.write_tsv(&args.out.join("train.tsv"))?;
    task.val.write_tsv(&args.out.join("val.tsv"))?;
    let run = toy_run_config(args, task.answer_count());
    std::fs::write(args.out.join("toy.config"), run.render())?;

    println!("seed={}", args.seed);
    println!("patterns={}", args.patterns);
    println!("questions={}", args.questions);
    println!("noise={}", args.noise);
    println!("feature_dim={}", args.feature_dim);
    println!("train_samples={}", task.train.len());
    println!("val_samples={}", task.val.len());
    println!("answers={}", task.answer_names.join(","));
    println!("majority_baseline={}", majority_baseline(&task.train));
    println!("out={}", args.out.display());
    Ok(())
}

//! `salatt eval`: score a checkpoint on a dataset and print the metrics as
//! key=value lines.

use std::path::PathBuf;

use clap::Args;

use salatt_core::error::Result;
use salatt_core::model::{register_model_params, Variant};
use salatt_core::params::{load_into_store, ParamStore};
use salatt_core::region::load_features;
use salatt_core::train::{build_answer_vocab, evaluate, Dataset};

use super::resolve_config;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Config file (key=value lines)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to score; defaults to the config's val_data
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Extra key=value config overrides
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut run = resolve_config(&args.config, &args.set)?;
    if let Some(v) = args.variant {
        run.variant = v;
    }
    let cfg = run.model_config()?;

    let mut store = ParamStore::new();
    register_model_params(&cfg, &mut store, run.seed)?;
    load_into_store(&args.checkpoint, &mut store)?;

    let features = load_features(&run.features_path()?)?;
    // the vocabulary is always rebuilt from the training answers, which is
    // deterministic and keeps the checkpoint self-contained
    let train = Dataset::read_tsv(&run.train_data_path()?)?;
    let vocab = build_answer_vocab(&train.answers(), cfg.answer_count)?;

    let data_path = match &args.data {
        Some(p) => p.clone(),
        None => run.val_data_path()?,
    };
    let mut dataset = Dataset::read_tsv(&data_path)?;
    dataset.resolve_labels(&vocab);

    let summary = evaluate(&cfg, &store, &features, &dataset, &vocab)?;
    println!("samples={}", summary.samples);
    println!("vqa_accuracy={}", summary.vqa_accuracy);
    println!("top1_accuracy={}", summary.top1_accuracy);
    if summary.empty {
        println!("warning=empty_dataset");
    }
    Ok(())
}

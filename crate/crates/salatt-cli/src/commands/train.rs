//! `salatt train`: run the training loop, write the best checkpoint and the
//! metrics log.

use std::path::PathBuf;

use clap::Args;

use salatt_core::error::{Error, Result};
use salatt_core::model::{register_model_params, Variant};
use salatt_core::params::{write_checkpoint, ParamStore};
use salatt_core::region::load_features;
use salatt_core::rng::RngState;
use salatt_core::train::{
    build_answer_vocab, evaluate, train_with_early_stopping, Dataset, MetricsRow,
};

use crate::config::RunConfig;

use super::resolve_config;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file (key=value lines)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoint.salatt and metrics.csv
    #[arg(long, default_value = "salatt-out")]
    pub out: PathBuf,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    /// Extra key=value config overrides
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.max_iterations {
            cfg.max_iterations = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.dropout_rate {
            cfg.dropout_rate = v;
        }
    }
}

pub fn render_metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("iteration,train_loss,val_vqa_acc,val_top1,seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            r.iteration, r.train_loss, r.val_vqa_acc, r.val_top1, r.seconds
        ));
    }
    out
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut run = resolve_config(&args.config, &args.set)?;
    args.apply(&mut run);
    let cfg = run.model_config()?;

    let features = load_features(&run.features_path()?)?;
    if let Some(block) = features.first() {
        if block.feature_dim != cfg.feature_dim || block.grid != cfg.grid {
            return Err(Error::config(format!(
                "feature file holds {}x{} blocks, config expects {}x{}",
                block.grid.region_total(),
                block.feature_dim,
                cfg.grid.region_total(),
                cfg.feature_dim
            )));
        }
    }
    let mut train = Dataset::read_tsv(&run.train_data_path()?)?;
    let mut val = Dataset::read_tsv(&run.val_data_path()?)?;
    let vocab = build_answer_vocab(&train.answers(), cfg.answer_count)?;
    train.resolve_labels(&vocab);
    val.resolve_labels(&vocab);

    let mut store = ParamStore::new();
    register_model_params(&cfg, &mut store, run.seed)?;
    let profile = run.train_profile();
    let mut rng = RngState::seeded(run.seed);
    let (state, mut rows) = train_with_early_stopping(
        &cfg,
        &mut store,
        &features,
        &train,
        &val,
        &vocab,
        &profile,
        &mut rng,
    )?;

    // final row: the best snapshot re-evaluated, so the log ends with what
    // the written checkpoint will score
    let started = std::time::Instant::now();
    store.restore(&state.best_params)?;
    let final_summary = evaluate(&cfg, &store, &features, &val, &vocab)?;
    let last_loss = rows.last().map(|r| r.train_loss).unwrap_or(f64::NAN);
    let last_seconds = rows.last().map(|r| r.seconds).unwrap_or(0.0);
    rows.push(MetricsRow {
        iteration: state.iteration,
        train_loss: last_loss,
        val_vqa_acc: final_summary.vqa_accuracy,
        val_top1: final_summary.top1_accuracy,
        seconds: last_seconds + started.elapsed().as_secs_f64(),
    });

    std::fs::create_dir_all(&args.out)?;
    let checkpoint_path = args.out.join("checkpoint.salatt");
    let metrics_path = args.out.join("metrics.csv");
    write_checkpoint(&checkpoint_path, &state.best_params)?;
    std::fs::write(&metrics_path, render_metrics_csv(&rows))?;

    println!("variant={}", cfg.variant);
    println!("seed={}", run.seed);
    println!("iterations={}", state.iteration);
    println!("best_iteration={}", state.best_iteration);
    println!("best_val_vqa_acc={}", state.best_val_accuracy);
    println!("final_val_vqa_acc={}", final_summary.vqa_accuracy);
    println!("final_val_top1={}", final_summary.top1_accuracy);
    println!("checkpoint={}", checkpoint_path.display());
    println!("metrics={}", metrics_path.display());
    Ok(())
}

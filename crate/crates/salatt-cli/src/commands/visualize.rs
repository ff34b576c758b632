//! `salatt visualize`: emit the pre-selection weight map and the attention
//! map of one sample as P2 graymaps, plus the numeric vectors and region
//! rectangles for external tooling.

use std::path::PathBuf;

use clap::Args;

use salatt_core::error::{Error, Result};
use salatt_core::model::{forward, register_model_params, BoundModel, Mode, Variant};
use salatt_core::params::{load_into_store, ParamStore};
use salatt_core::region::{load_features, region_bounds};
use salatt_core::rng::RngState;
use salatt_core::tape::Tape;
use salatt_core::train::{build_answer_vocab, Dataset};

use crate::pgm::write_pgm;

use super::resolve_config;

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    /// Config file (key=value lines)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to pick the sample from; defaults to the config's val_data
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sample index within the dataset
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    /// Output directory for preselect.pgm and attention.pgm
    #[arg(long, default_value = "salatt-maps")]
    pub out: PathBuf,
    /// Image side in pixels for the printed region rectangles
    #[arg(long, default_value_t = 448)]
    pub image_side: usize,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Extra key=value config overrides
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn cmd_visualize(args: &VisualizeArgs) -> Result<()> {
    let mut run = resolve_config(&args.config, &args.set)?;
    if let Some(v) = args.variant {
        run.variant = v;
    }
    let cfg = run.model_config()?;

    let mut store = ParamStore::new();
    register_model_params(&cfg, &mut store, run.seed)?;
    load_into_store(&args.checkpoint, &mut store)?;

    let features = load_features(&run.features_path()?)?;
    let train = Dataset::read_tsv(&run.train_data_path()?)?;
    let vocab = build_answer_vocab(&train.answers(), cfg.answer_count)?;
    let data_path = match &args.data {
        Some(p) => p.clone(),
        None => run.val_data_path()?,
    };
    let dataset = Dataset::read_tsv(&data_path)?;

    let sample = dataset.samples.get(args.sample).ok_or_else(|| {
        Error::argument(format!(
            "sample index {} out of range for {} samples",
            args.sample,
            dataset.len()
        ))
    })?;
    let block = features.get(sample.image).ok_or_else(|| {
        Error::argument(format!(
            "sample references image {} but only {} feature blocks are loaded",
            sample.image,
            features.len()
        ))
    })?;

    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let model = BoundModel::bind(&cfg, &binding)?;
    let mut rng = RngState::seeded(run.seed);
    let pass = forward(&mut tape, &cfg, &model, block, &sample.tokens, Mode::Eval, &mut rng)?;
    let trace = pass.trace;

    let n = cfg.grid.regions_per_side();
    std::fs::create_dir_all(&args.out)?;
    let attention_path = args.out.join("attention.pgm");
    write_pgm(&attention_path, trace.attention_map.data(), n)?;

    println!("sample={}", args.sample);
    println!(
        "question_tokens={}",
        sample
            .tokens
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    );
    println!("answer={}", sample.answer);
    let usable = vocab.len().min(cfg.answer_count);
    let logits = trace.logits.data();
    let mut best = 0;
    for k in 1..usable {
        if logits[k] > logits[best] {
            best = k;
        }
    }
    println!("predicted={}", vocab.answer(best));
    match &trace.preselect_weights {
        Some(weights) => {
            let preselect_path = args.out.join("preselect.pgm");
            write_pgm(&preselect_path, weights.data(), n)?;
            println!("preselect_weights={}", join_floats(weights.data()));
            println!("preselect_map={}", preselect_path.display());
        }
        None => println!("preselect_weights=none"),
    }
    println!("attention_map={}", join_floats(trace.attention_map.data()));
    println!("attention_map_file={}", attention_path.display());
    for index in 0..cfg.grid.region_total() {
        let (x0, y0, x1, y1) = region_bounds(&cfg.grid, index, args.image_side)?;
        println!("region_{index}_bounds={x0},{y0},{x1},{y1}");
    }
    Ok(())
}

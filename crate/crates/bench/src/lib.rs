//! Shared fixtures for the benchmarks.

use salatt_core::model::{register_model_params, ModelConfig, Variant};
use salatt_core::params::ParamStore;
use salatt_core::region::{RegionFeatureBlock, RegionGrid, SynthGenerator, SynthSpec};
use salatt_core::rng::RngState;
use salatt_core::train::{build_answer_vocab, build_toy_task, AnswerVocab, Dataset, ToyTaskSpec};

pub struct Fixture {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub features: Vec<RegionFeatureBlock>,
    pub train: Dataset,
    pub val: Dataset,
    pub vocab: AnswerVocab,
}

/// Desk-scale model over the default toy task.
pub fn fixture(variant: Variant) -> Fixture {
    let spec = ToyTaskSpec {
        train_samples: 256,
        val_samples: 64,
        ..ToyTaskSpec::default()
    };
    let task = build_toy_task(&spec, 42).unwrap();
    let vocab = build_answer_vocab(&task.train.answers(), task.answer_count()).unwrap();
    let mut train = task.train.clone();
    let mut val = task.val.clone();
    train.resolve_labels(&vocab);
    val.resolve_labels(&vocab);
    let cfg = ModelConfig {
        variant,
        feature_dim: spec.feature_dim,
        embed_dim: 12,
        question_layers: 1,
        question_hidden: 12,
        common_dim: 24,
        vocab_size: salatt_core::train::TOY_QUESTION_VOCAB,
        answer_count: task.answer_count(),
        dropout_rate: 0.0,
        grid: spec.grid,
        normalize_features: false,
    };
    let mut store = ParamStore::new();
    register_model_params(&cfg, &mut store, 42).unwrap();
    Fixture {
        cfg,
        store,
        features: task.features,
        train,
        val,
        vocab,
    }
}

/// One synthetic region block for kernel-level benchmarks.
pub fn block(feature_dim: usize) -> RegionFeatureBlock {
    let generator = SynthGenerator::new(
        SynthSpec {
            grid: RegionGrid::new(4, 2, 1).unwrap(),
            feature_dim,
            patterns: 4,
            noise_sigma: 0.3,
        },
        7,
    )
    .unwrap();
    let mut rng = RngState::seeded(8);
    generator.sample(&mut rng).0
}

//! Answer vocabulary, the VQA accuracy metric, dataset handling, the
//! training loop with early stopping, and the synthetic toy task.
//!
//! Dataset files are UTF-8 text, one sample per line, exactly 13
//! tab-separated fields:
//!
//! ```text
//! image_index <TAB> token ids (space-separated) <TAB> answer <TAB> ref_1 <TAB> ... <TAB> ref_10
//! ```

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{forward, BoundModel, Mode, ModelConfig};
use crate::params::{ParamStore, RmspropConfig};
use crate::region::{RegionFeatureBlock, RegionGrid, SynthGenerator, SynthSpec};
use crate::rng::RngState;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Lowercase + trim; the only canonicalization applied to answers.
pub fn canonicalize(answer: &str) -> String {
    answer.trim().to_lowercase()
}

/// Answer strings ordered by descending training-set frequency, ties broken
/// by first occurrence.
#[derive(Debug, Clone)]
pub struct AnswerVocab {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

impl AnswerVocab {
    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn answer(&self, idx: usize) -> &str {
        &self.answers[idx]
    }

    pub fn lookup(&self, answer: &str) -> Option<usize> {
        self.index.get(&canonicalize(answer)).copied()
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }
}

/// Top-k answers by frequency (canonicalized), ties by first occurrence.
pub fn build_answer_vocab(answers: &[String], k: usize) -> Result<AnswerVocab> {
    if answers.is_empty() {
        return Err(Error::argument("cannot build a vocabulary from no answers"));
    }
    if k < 1 {
        return Err(Error::argument("vocabulary size k must be >= 1"));
    }
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new(); // -> (count, first_pos)
    for (pos, raw) in answers.iter().enumerate() {
        let canon = canonicalize(raw);
        let entry = counts.entry(canon).or_insert((0, pos));
        entry.0 += 1;
    }
    let mut ranked: Vec<(String, usize, usize)> = counts
        .into_iter()
        .map(|(a, (c, first))| (a, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(k);
    let answers: Vec<String> = ranked.into_iter().map(|(a, _, _)| a).collect();
    let index = answers
        .iter()
        .enumerate()
        .map(|(i, a)| (a.clone(), i))
        .collect();
    Ok(AnswerVocab { answers, index })
}

/// min(#matching references / 3, 1), with exact string matching after
/// canonicalization. Requires exactly 10 references.
pub fn vqa_accuracy(predicted: &str, references: &[String]) -> Result<f64> {
    if references.len() != 10 {
        return Err(Error::argument(format!(
            "vqa_accuracy needs exactly 10 reference answers, got {}",
            references.len()
        )));
    }
    let canon = canonicalize(predicted);
    let matches = references
        .iter()
        .filter(|r| canonicalize(r) == canon)
        .count();
    Ok((matches as f64 / 3.0).min(1.0))
}

/// One image-question-answer sample. `label` is resolved against an
/// [`AnswerVocab`]; `None` marks an out-of-vocabulary answer, which keeps the
/// sample usable for evaluation (where it can only count against the model)
/// but not for training.
#[derive(Debug, Clone)]
pub struct VqaSample {
    pub image: usize,
    pub tokens: Vec<usize>,
    pub answer: String,
    pub references: Vec<String>,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<VqaSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn answers(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.answer.clone()).collect()
    }

    /// Set every sample's label from the vocabulary.
    pub fn resolve_labels(&mut self, vocab: &AnswerVocab) {
        for sample in &mut self.samples {
            sample.label = vocab.lookup(&sample.answer);
        }
    }

    /// Indices of samples usable for training.
    pub fn labeled_indices(&self) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label.is_some())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for s in &self.samples {
            let tokens: Vec<String> = s.tokens.iter().map(|t| t.to_string()).collect();
            out.push_str(&s.image.to_string());
            out.push('\t');
            out.push_str(&tokens.join(" "));
            out.push('\t');
            out.push_str(&s.answer);
            for r in &s.references {
                out.push('\t');
                out.push_str(r);
            }
            out.push('\n');
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 13 {
                return Err(Error::format(
                    0,
                    format!(
                        "{}:{}: expected 13 tab-separated fields, got {}",
                        path.display(),
                        lineno + 1,
                        fields.len()
                    ),
                ));
            }
            let image: usize = fields[0].parse().map_err(|_| {
                Error::format(
                    0,
                    format!(
                        "{}:{}: bad image index `{}`",
                        path.display(),
                        lineno + 1,
                        fields[0]
                    ),
                )
            })?;
            let tokens: Vec<usize> = fields[1]
                .split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| {
                        Error::format(
                            0,
                            format!("{}:{}: bad token id `{t}`", path.display(), lineno + 1),
                        )
                    })
                })
                .collect::<Result<_>>()?;
            if tokens.is_empty() {
                return Err(Error::format(
                    0,
                    format!("{}:{}: question has no tokens", path.display(), lineno + 1),
                ));
            }
            samples.push(VqaSample {
                image,
                tokens,
                answer: fields[2].to_string(),
                references: fields[3..13].iter().map(|s| s.to_string()).collect(),
                label: None,
            });
        }
        Ok(Dataset { samples })
    }
}

/// Uniform with-replacement sample of `batch_size` indices from a pool.
pub fn sample_batch(pool: &[usize], batch_size: usize, rng: &mut RngState) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::argument(
            "cannot sample a batch from an empty dataset",
        ));
    }
    Ok((0..batch_size)
        .map(|_| pool[rng.below(pool.len())])
        .collect())
}

/// Forward+loss for one sample on an existing tape. Training requires an
/// in-vocabulary label.
fn sample_loss_node(
    tape: &mut Tape,
    cfg: &ModelConfig,
    model: &BoundModel,
    features: &[RegionFeatureBlock],
    sample: &VqaSample,
    mode: Mode,
    rng: &mut RngState,
) -> Result<crate::tape::NodeId> {
    let label = sample.label.ok_or_else(|| {
        Error::argument(format!(
            "sample answer `{}` is not in the answer vocabulary",
            sample.answer
        ))
    })?;
    let block = features.get(sample.image).ok_or_else(|| {
        Error::argument(format!(
            "sample references image {} but only {} feature blocks are loaded",
            sample.image,
            features.len()
        ))
    })?;
    let pass = forward(tape, cfg, model, block, &sample.tokens, mode, rng)?;
    tape.cross_entropy(pass.logits_id, label)
}

/// Mean cross-entropy of a batch without touching parameters (dropout off).
pub fn batch_loss(
    cfg: &ModelConfig,
    store: &ParamStore,
    features: &[RegionFeatureBlock],
    batch: &[&VqaSample],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let model = BoundModel::bind(cfg, &binding)?;
    let mut rng = RngState::seeded(0);
    let mut total = 0.0;
    for sample in batch {
        let loss =
            sample_loss_node(&mut tape, cfg, &model, features, sample, Mode::Eval, &mut rng)?;
        total += tape.value(loss).item();
    }
    Ok(total / batch.len() as f64)
}

/// One optimization step: forward every sample in train mode, mean the
/// losses, backpropagate, apply RMSprop. Returns the pre-update mean loss.
pub fn train_step(
    cfg: &ModelConfig,
    store: &mut ParamStore,
    features: &[RegionFeatureBlock],
    batch: &[&VqaSample],
    optimizer: &RmspropConfig,
    rng: &mut RngState,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let model = BoundModel::bind(cfg, &binding)?;
    let mut losses = Vec::with_capacity(batch.len());
    for sample in batch {
        losses.push(sample_loss_node(
            &mut tape, cfg, &model, features, sample, Mode::Train, rng,
        )?);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    let mean = tape.scale(total, 1.0 / batch.len() as f64);
    let loss_value = tape.value(mean).item();
    let grads = tape.backward(mean)?;
    store.accumulate_grads(&binding, &grads);
    store.rmsprop_step(optimizer);
    Ok(loss_value)
}

/// Metrics from one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    /// Mean min(matches/3, 1) against the reference answers.
    pub vqa_accuracy: f64,
    /// Mean exact-match against the single ground-truth answer.
    pub top1_accuracy: f64,
    pub samples: usize,
    /// Set when the dataset was empty and both metrics were defined as 0.
    pub empty: bool,
}

/// Eval-mode pass over a dataset: argmax prediction (ties to the lowest
/// class index), scored by the VQA metric and plain top-1.
pub fn evaluate(
    cfg: &ModelConfig,
    store: &ParamStore,
    features: &[RegionFeatureBlock],
    dataset: &Dataset,
    vocab: &AnswerVocab,
) -> Result<EvalSummary> {
    if dataset.is_empty() {
        return Ok(EvalSummary {
            vqa_accuracy: 0.0,
            top1_accuracy: 0.0,
            samples: 0,
            empty: true,
        });
    }
    let mut vqa_sum = 0.0;
    let mut top1_sum = 0.0;
    let mut rng = RngState::seeded(0);
    // predictions are restricted to classes that name a real answer
    let usable = vocab.len().min(cfg.answer_count);
    for sample in &dataset.samples {
        let block = features.get(sample.image).ok_or_else(|| {
            Error::argument(format!(
                "sample references image {} but only {} feature blocks are loaded",
                sample.image,
                features.len()
            ))
        })?;
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let model = BoundModel::bind(cfg, &binding)?;
        let pass = forward(
            &mut tape,
            cfg,
            &model,
            block,
            &sample.tokens,
            Mode::Eval,
            &mut rng,
        )?;
        let logits = pass.trace.logits.data();
        let mut best = 0usize;
        for k in 1..usable {
            if logits[k] > logits[best] {
                best = k;
            }
        }
        let predicted = vocab.answer(best);
        vqa_sum += vqa_accuracy(predicted, &sample.references)?;
        if canonicalize(predicted) == canonicalize(&sample.answer) {
            top1_sum += 1.0;
        }
    }
    let n = dataset.len() as f64;
    Ok(EvalSummary {
        vqa_accuracy: vqa_sum / n,
        top1_accuracy: top1_sum / n,
        samples: dataset.len(),
        empty: false,
    })
}

/// Stop when `iteration - best_iteration >= patience`, where best moves only
/// on strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best_accuracy: f64,
    best_iteration: usize,
    seen_any: bool,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_accuracy: f64::NEG_INFINITY,
            best_iteration: 0,
            seen_any: false,
        }
    }

    /// Record an evaluation; returns (improved, stop).
    pub fn observe(&mut self, iteration: usize, accuracy: f64) -> (bool, bool) {
        let improved = !self.seen_any || accuracy > self.best_accuracy;
        if improved {
            self.best_accuracy = accuracy;
            self.best_iteration = iteration;
            self.seen_any = true;
        }
        let stop = iteration - self.best_iteration >= self.patience;
        (improved, stop)
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_iteration, self.best_accuracy)
    }
}

/// Training hyperparameters for one run.
#[derive(Debug, Clone)]
pub struct TrainProfile {
    pub batch_size: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub max_iterations: usize,
    pub optimizer: RmspropConfig,
}

/// Outcome of a training run: the best validation snapshot seen.
#[derive(Debug)]
pub struct TrainState {
    pub iteration: usize,
    pub best_val_accuracy: f64,
    pub best_iteration: usize,
    pub best_params: Vec<(String, Tensor)>,
}

/// One metrics-log row; written as CSV by the CLI.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_vqa_acc: f64,
    pub val_top1: f64,
    pub seconds: f64,
}

/// Run batched RMSprop training with periodic validation and early stopping.
/// Evaluates at iteration 0 and then every `eval_every` iterations; stops
/// once `patience` iterations pass without a new best validation accuracy,
/// or at `max_iterations`. Returns the best snapshot and the metrics rows.
#[allow(clippy::too_many_arguments)]
pub fn train_with_early_stopping(
    cfg: &ModelConfig,
    store: &mut ParamStore,
    features: &[RegionFeatureBlock],
    train: &Dataset,
    val: &Dataset,
    vocab: &AnswerVocab,
    profile: &TrainProfile,
    rng: &mut RngState,
) -> Result<(TrainState, Vec<MetricsRow>)> {
    if profile.batch_size == 0 {
        return Err(Error::argument("batch_size must be >= 1"));
    }
    if profile.eval_every == 0 {
        return Err(Error::argument("eval_every must be >= 1"));
    }
    let pool = train.labeled_indices();
    if pool.is_empty() {
        return Err(Error::argument(
            "training set has no samples with in-vocabulary answers",
        ));
    }
    let start = Instant::now();
    let mut stopper = EarlyStopper::new(profile.patience);
    let mut rows = Vec::new();
    let mut best_params = store.snapshot();

    // initial evaluation so a zero-iteration run still reports something
    let probe: Vec<&VqaSample> = sample_batch(&pool, profile.batch_size.min(pool.len()), rng)?
        .iter()
        .map(|&i| &train.samples[i])
        .collect();
    let mut last_loss = batch_loss(cfg, store, features, &probe)?;
    let summary = evaluate(cfg, store, features, val, vocab)?;
    rows.push(MetricsRow {
        iteration: 0,
        train_loss: last_loss,
        val_vqa_acc: summary.vqa_accuracy,
        val_top1: summary.top1_accuracy,
        seconds: start.elapsed().as_secs_f64(),
    });
    let (_, mut stop) = stopper.observe(0, summary.vqa_accuracy);

    let mut iteration = 0;
    while !stop && iteration < profile.max_iterations {
        iteration += 1;
        let batch: Vec<&VqaSample> = sample_batch(&pool, profile.batch_size, rng)?
            .iter()
            .map(|&i| &train.samples[i])
            .collect();
        last_loss = train_step(cfg, store, features, &batch, &profile.optimizer, rng)?;

        if iteration % profile.eval_every == 0 {
            let summary = evaluate(cfg, store, features, val, vocab)?;
            rows.push(MetricsRow {
                iteration,
                train_loss: last_loss,
                val_vqa_acc: summary.vqa_accuracy,
                val_top1: summary.top1_accuracy,
                seconds: start.elapsed().as_secs_f64(),
            });
            let (improved, should_stop) = stopper.observe(iteration, summary.vqa_accuracy);
            if improved {
                best_params = store.snapshot();
            }
            stop = should_stop;
        }
    }

    let (best_iteration, best_val_accuracy) = stopper.best();
    Ok((
        TrainState {
            iteration,
            best_val_accuracy,
            best_iteration,
            best_params,
        },
        rows,
    ))
}

// ---------------------------------------------------------------------------
// Toy task
// ---------------------------------------------------------------------------

/// Construction parameters for the synthetic task. Each sample plants one of
/// `patterns` prototype vectors in a uniformly chosen region; the question is
/// one of `templates` fixed token sequences and the answer is a function of
/// (pattern, template): the pattern's name, or the name of its group (pattern
/// id mod 2). Answering therefore requires both reading the question and
/// finding the planted evidence among noise-only regions.
#[derive(Debug, Clone)]
pub struct ToyTaskSpec {
    pub grid: RegionGrid,
    pub feature_dim: usize,
    pub patterns: usize,
    pub templates: usize,
    pub noise_sigma: f64,
    pub train_samples: usize,
    pub val_samples: usize,
}

impl Default for ToyTaskSpec {
    fn default() -> Self {
        ToyTaskSpec {
            grid: RegionGrid::new(4, 2, 1).expect("static grid"),
            feature_dim: 16,
            patterns: 4,
            templates: 2,
            noise_sigma: 0.3,
            train_samples: 2000,
            val_samples: 200,
        }
    }
}

const PATTERN_NAMES: [&str; 8] = [
    "checker", "stripe", "ring", "wave", "blob", "cross", "arch", "spot",
];
const GROUP_NAMES: [&str; 2] = ["warm", "cool"];

/// Token sequences of the question templates; id 0 is the reserved UNK.
pub const TEMPLATE_TOKENS: [&[usize]; 2] = [&[1, 2, 3, 4], &[5, 6, 7, 8]];

/// Question vocabulary size implied by the templates (plus UNK).
pub const TOY_QUESTION_VOCAB: usize = 9;

pub fn pattern_name(p: usize) -> String {
    PATTERN_NAMES
        .get(p)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("pattern{p}"))
}

pub fn group_name(p: usize) -> String {
    GROUP_NAMES[p % 2].to_string()
}

#[derive(Debug)]
pub struct ToyTask {
    pub spec: ToyTaskSpec,
    pub features: Vec<RegionFeatureBlock>,
    pub train: Dataset,
    pub val: Dataset,
    /// Every answer the task can produce, patterns first.
    pub answer_names: Vec<String>,
}

impl ToyTask {
    pub fn answer_count(&self) -> usize {
        self.answer_names.len()
    }
}

/// Deterministically generate the toy task from a seed. Feature blocks are
/// shared between the splits; train samples reference images
/// `0..train_samples` and val samples the rest.
pub fn build_toy_task(spec: &ToyTaskSpec, seed: u64) -> Result<ToyTask> {
    if spec.patterns < 1 {
        return Err(Error::argument("toy task needs at least one pattern"));
    }
    if !(1..=2).contains(&spec.templates) {
        return Err(Error::argument(
            "toy task supports 1 or 2 question templates",
        ));
    }
    if spec.train_samples < 1 || spec.val_samples < 1 {
        return Err(Error::argument("toy task needs train and val samples"));
    }
    let generator = SynthGenerator::new(
        SynthSpec {
            grid: spec.grid,
            feature_dim: spec.feature_dim,
            patterns: spec.patterns,
            noise_sigma: spec.noise_sigma,
        },
        seed,
    )?;
    let mut rng = RngState::seeded(seed).derive("toy.samples");
    let total = spec.train_samples + spec.val_samples;
    let mut features = Vec::with_capacity(total);
    let mut samples = Vec::with_capacity(total);
    for image in 0..total {
        let (block, _region, pattern) = generator.sample(&mut rng);
        features.push(block);
        let template = rng.below(spec.templates);
        let answer = match template {
            0 => pattern_name(pattern),
            _ => group_name(pattern),
        };
        samples.push(VqaSample {
            image,
            tokens: TEMPLATE_TOKENS[template].to_vec(),
            answer: answer.clone(),
            references: vec![answer; 10],
            label: None,
        });
    }
    let val_samples = samples.split_off(spec.train_samples);
    let mut answer_names: Vec<String> = (0..spec.patterns).map(pattern_name).collect();
    if spec.templates > 1 {
        for g in GROUP_NAMES {
            answer_names.push(g.to_string());
        }
    }
    Ok(ToyTask {
        spec: spec.clone(),
        features,
        train: Dataset { samples },
        val: Dataset {
            samples: val_samples,
        },
        answer_names,
    })
}

/// Accuracy of always predicting the most frequent training answer.
pub fn majority_baseline(train: &Dataset) -> f64 {
    if train.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in &train.samples {
        *counts.entry(canonicalize(&s.answer)).or_insert(0) += 1;
    }
    let max = counts.values().copied().max().unwrap_or(0);
    max as f64 / train.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{register_model_params, Variant};

    fn toy_model_config(task: &ToyTask, variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            feature_dim: task.spec.feature_dim,
            embed_dim: 8,
            question_layers: 1,
            question_hidden: 8,
            common_dim: 12,
            vocab_size: TOY_QUESTION_VOCAB,
            answer_count: task.answer_count(),
            dropout_rate: 0.0,
            grid: task.spec.grid,
            normalize_features: false,
        }
    }

    #[test]
    fn vocab_top_k_and_ties() {
        let answers: Vec<String> = ["a", "a", "b"].iter().map(|s| s.to_string()).collect();
        let vocab = build_answer_vocab(&answers, 1).unwrap();
        assert_eq!(vocab.answers(), &["a".to_string()]);

        let vocab = build_answer_vocab(&answers, 10).unwrap();
        assert_eq!(vocab.len(), 2);

        // tie a:2 b:2, k=1 -> first-occurring wins
        let answers: Vec<String> = ["b", "a", "a", "b"].iter().map(|s| s.to_string()).collect();
        let vocab = build_answer_vocab(&answers, 1).unwrap();
        assert_eq!(vocab.answers(), &["b".to_string()]);

        assert!(build_answer_vocab(&[], 5).is_err());
    }

    #[test]
    fn vocab_canonicalizes() {
        let answers: Vec<String> = ["Yes ", "yes", " YES"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let vocab = build_answer_vocab(&answers, 10).unwrap();
        assert_eq!(vocab.len(), 1);
        assert_eq!(vocab.lookup("yEs  "), Some(0));
    }

    #[test]
    fn vqa_accuracy_formula() {
        let refs = |hits: usize| -> Vec<String> {
            (0..10)
                .map(|i| {
                    if i < hits {
                        "cat".to_string()
                    } else {
                        format!("other{i}")
                    }
                })
                .collect()
        };
        assert_eq!(vqa_accuracy("cat", &refs(0)).unwrap(), 0.0);
        assert!((vqa_accuracy("cat", &refs(2)).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(vqa_accuracy("cat", &refs(3)).unwrap(), 1.0);
        assert_eq!(vqa_accuracy("cat", &refs(10)).unwrap(), 1.0);
        assert_eq!(vqa_accuracy("CAT ", &refs(3)).unwrap(), 1.0);
        assert!(vqa_accuracy("cat", &refs(3)[..9]).is_err());
    }

    #[test]
    fn dataset_tsv_roundtrip_and_errors() {
        let dir = std::env::temp_dir().join(format!("salatt-ds-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.tsv");

        let ds = Dataset {
            samples: vec![VqaSample {
                image: 3,
                tokens: vec![1, 2, 9],
                answer: "warm".to_string(),
                references: (0..10).map(|_| "warm".to_string()).collect(),
                label: None,
            }],
        };
        ds.write_tsv(&path).unwrap();
        let back = Dataset::read_tsv(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.samples[0].image, 3);
        assert_eq!(back.samples[0].tokens, vec![1, 2, 9]);
        assert_eq!(back.samples[0].answer, "warm");
        assert_eq!(back.samples[0].references.len(), 10);

        std::fs::write(&path, "1\t2 3\tanswer\tonly\tfour\tfields\n").unwrap();
        assert!(Dataset::read_tsv(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sample_batch_behaviour() {
        let pool = vec![7];
        let mut rng = RngState::seeded(1);
        assert_eq!(sample_batch(&pool, 1, &mut rng).unwrap(), vec![7]);
        assert!(sample_batch(&[], 1, &mut rng).is_err());

        let pool: Vec<usize> = (0..10).collect();
        let mut r1 = RngState::seeded(5);
        let mut r2 = RngState::seeded(5);
        assert_eq!(
            sample_batch(&pool, 32, &mut r1).unwrap(),
            sample_batch(&pool, 32, &mut r2).unwrap()
        );
    }

    #[test]
    fn sample_batch_is_roughly_uniform() {
        let pool: Vec<usize> = (0..10).collect();
        let mut rng = RngState::seeded(77);
        let draws = 100_000;
        let batch = sample_batch(&pool, draws, &mut rng).unwrap();
        let mut counts = [0usize; 10];
        for i in batch {
            counts[i] += 1;
        }
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        for &c in &counts {
            assert!(
                (c as f64 - draws as f64 / 10.0).abs() < 3.0 * sigma,
                "{counts:?}"
            );
        }
    }

    #[test]
    fn toy_task_is_deterministic_and_balanced() {
        let spec = ToyTaskSpec {
            train_samples: 300,
            val_samples: 50,
            ..ToyTaskSpec::default()
        };
        let t1 = build_toy_task(&spec, 42).unwrap();
        let t2 = build_toy_task(&spec, 42).unwrap();
        assert_eq!(t1.train.len(), 300);
        assert_eq!(t1.val.len(), 50);
        assert_eq!(t1.features.len(), 350);
        for (a, b) in t1.train.samples.iter().zip(&t2.train.samples) {
            assert_eq!(a.answer, b.answer);
            assert_eq!(a.tokens, b.tokens);
        }
        assert_eq!(
            t1.features[17].features.data(),
            t2.features[17].features.data()
        );
        // P=4, Q=2 -> 6 possible answers; majority class is a group name at
        // about a quarter of the samples
        assert_eq!(t1.answer_count(), 6);
        let baseline = majority_baseline(&t1.train);
        assert!(baseline <= 0.30, "baseline {baseline}");
        assert!(baseline >= 0.15, "baseline {baseline}");
    }

    #[test]
    fn toy_task_rejects_bad_specs() {
        let spec = ToyTaskSpec {
            patterns: 0,
            ..ToyTaskSpec::default()
        };
        assert!(build_toy_task(&spec, 1).is_err());
        let spec = ToyTaskSpec {
            templates: 3,
            ..ToyTaskSpec::default()
        };
        assert!(build_toy_task(&spec, 1).is_err());
    }

    #[test]
    fn single_pattern_single_template_task_is_trivially_solved() {
        let spec = ToyTaskSpec {
            patterns: 1,
            templates: 1,
            train_samples: 20,
            val_samples: 10,
            ..ToyTaskSpec::default()
        };
        let task = build_toy_task(&spec, 9).unwrap();
        assert_eq!(task.answer_count(), 1);
        let vocab = build_answer_vocab(&task.train.answers(), 1).unwrap();
        let mut val = task.val.clone();
        val.resolve_labels(&vocab);
        let cfg = toy_model_config(&task, Variant::Holistic);
        let mut store = ParamStore::new();
        register_model_params(&cfg, &mut store, 1).unwrap();
        // single answer class: even an untrained model is always right
        let summary = evaluate(&cfg, &store, &task.features, &val, &vocab).unwrap();
        assert_eq!(summary.vqa_accuracy, 1.0);
        assert_eq!(summary.top1_accuracy, 1.0);
    }

    #[test]
    fn evaluate_empty_dataset_flags_and_zeroes() {
        let spec = ToyTaskSpec {
            train_samples: 5,
            val_samples: 1,
            ..ToyTaskSpec::default()
        };
        let task = build_toy_task(&spec, 3).unwrap();
        let vocab = build_answer_vocab(&task.train.answers(), 6).unwrap();
        let cfg = toy_model_config(&task, Variant::RegAtt);
        let mut store = ParamStore::new();
        register_model_params(&cfg, &mut store, 2).unwrap();
        let empty = Dataset::default();
        let summary = evaluate(&cfg, &store, &task.features, &empty, &vocab).unwrap();
        assert!(summary.empty);
        assert_eq!(summary.vqa_accuracy, 0.0);
        assert_eq!(summary.top1_accuracy, 0.0);
    }

    #[test]
    fn evaluate_vqa_equals_top1_when_references_repeat_the_answer() {
        let spec = ToyTaskSpec {
            train_samples: 40,
            val_samples: 25,
            ..ToyTaskSpec::default()
        };
        let task = build_toy_task(&spec, 4).unwrap();
        let vocab = build_answer_vocab(&task.train.answers(), 6).unwrap();
        let mut val = task.val.clone();
        val.resolve_labels(&vocab);
        let cfg = toy_model_config(&task, Variant::SalAtt);
        let mut store = ParamStore::new();
        register_model_params(&cfg, &mut store, 5).unwrap();
        let summary = evaluate(&cfg, &store, &task.features, &val, &vocab).unwrap();
        assert!((summary.vqa_accuracy - summary.top1_accuracy).abs() < 1e-12);
    }

    #[test]
    fn evaluate_constant_matching_classifier_scores_one() {
        // force the classifier to always pick class 0, and make every sample's
        // answer and references that class's name
        let spec = ToyTaskSpec {
            train_samples: 10,
            val_samples: 8,
            ..ToyTaskSpec::default()
        };
        let task = build_toy_task(&spec, 6).unwrap();
        let vocab = build_answer_vocab(&task.train.answers(), 6).unwrap();
        let target = vocab.answer(0).to_string();
        let mut val = task.val.clone();
        for s in &mut val.samples {
            s.answer = target.clone();
            s.references = vec![target.clone(); 10];
        }
        val.resolve_labels(&vocab);
        let cfg = toy_model_config(&task, Variant::Holistic);
        let mut store = ParamStore::new();
        register_model_params(&cfg, &mut store, 7).unwrap();
        let mut bias = vec![0.0; cfg.answer_count];
        bias[0] = 50.0;
        store
            .set_value("classifier.bias", Tensor::from_vec(bias))
            .unwrap();
        let summary = evaluate(&cfg, &store, &task.features, &val, &vocab).unwrap();
        assert_eq!(summary.vqa_accuracy, 1.0);
        assert_eq!(summary.top1_accuracy, 1.0);
    }

    #[test]
    fn train_step_zero_learning_rate_keeps_parameters() {
        let spec = ToyTaskSpec {
            train_samples: 8,
            val_samples: 2,
            ..ToyTaskSpec::default()
        };
        let task = build_toy_task(&spec, 11).unwrap();
        let vocab = build_answer_vocab(&task.train.answers(), 6).unwrap();
        let mut train = task.train.clone();
        train.resolve_labels(&vocab);
        let cfg = toy_model_config(&task, Variant::RegAtt);
        let mut store = ParamStore::new();
        register_model_params(&cfg, &mut store, 12).unwrap();
        let before = store.snapshot();

        let optimizer = RmspropConfig {
            learning_rate: 0.0,
            ..RmspropConfig::default()
        };
        let batch: Vec<&VqaSample> = train.samples.iter().take(4).collect();
        let mut rng = RngState::seeded(13);
        let loss1 =
            train_step(&cfg, &mut store, &task.features, &batch, &optimizer, &mut rng).unwrap();
        let loss2 =
            train_step(&cfg, &mut store, &task.features, &batch, &optimizer, &mut rng).unwrap();
        assert!((loss1 - loss2).abs() < 1e-15);
        for ((n1, t1), (n2, t2)) in before.iter().zip(store.snapshot().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.data(), t2.data());
        }
    }

    #[test]
    fn train_step_first_loss_is_near_log_answer_count() {
        let spec = ToyTaskSpec {
            train_samples: 32,
            val_samples: 4,
            ..ToyTaskSpec::default()
        };
        let task = build_toy_task(&spec, 14).unwrap();
        let vocab = build_answer_vocab(&task.train.answers(), 6).unwrap();
        let mut train = task.train.clone();
        train.resolve_labels(&vocab);
        let cfg = toy_model_config(&task, Variant::SalAtt);
        let mut store = ParamStore::new();
        register_model_params(&cfg, &mut store, 15).unwrap();
        let batch: Vec<&VqaSample> = train.samples.iter().collect();
        let mut rng = RngState::seeded(16);
        let loss = train_step(
            &cfg,
            &mut store,
            &task.features,
            &batch,
            &RmspropConfig::default(),
            &mut rng,
        )
        .unwrap();
        let expected = (task.answer_count() as f64).ln();
        assert!(
            (loss - expected).abs() < 0.2 * expected,
            "loss {loss} vs ln C {expected}"
        );
    }

    #[test]
    fn train_step_memorizes_four_samples() {
        let spec = ToyTaskSpec {
            train_samples: 4,
            val_samples: 1,
            noise_sigma: 0.1,
            ..ToyTaskSpec::default()
        };
        let task = build_toy_task(&spec, 17).unwrap();
        let vocab = build_answer_vocab(&task.train.answers(), 6).unwrap();
        let mut train = task.train.clone();
        train.resolve_labels(&vocab);
        let cfg = toy_model_config(&task, Variant::RegAtt);
        let mut store = ParamStore::new();
        register_model_params(&cfg, &mut store, 18).unwrap();
        let optimizer = RmspropConfig {
            learning_rate: 0.01,
            ..RmspropConfig::default()
        };
        let batch: Vec<&VqaSample> = train.samples.iter().collect();
        let mut rng = RngState::seeded(19);
        let mut reached = false;
        for _ in 0..500 {
            let loss =
                train_step(&cfg, &mut store, &task.features, &batch, &optimizer, &mut rng)
                    .unwrap();
            if loss < 0.01 {
                reached = true;
                break;
            }
        }
        assert!(reached, "memorization did not drive loss below 0.01");
    }

    #[test]
    fn train_step_rejects_unlabeled_samples() {
        let spec = ToyTaskSpec {
            train_samples: 4,
            val_samples: 1,
            ..ToyTaskSpec::default()
        };
        let task = build_toy_task(&spec, 20).unwrap();
        let cfg = toy_model_config(&task, Variant::RegAtt);
        let mut store = ParamStore::new();
        register_model_params(&cfg, &mut store, 21).unwrap();
        // labels never resolved
        let batch: Vec<&VqaSample> = task.train.samples.iter().collect();
        let mut rng = RngState::seeded(22);
        let err = train_step(
            &cfg,
            &mut store,
            &task.features,
            &batch,
            &RmspropConfig::default(),
            &mut rng,
        );
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn train_step_is_bit_reproducible() {
        let spec = ToyTaskSpec {
            train_samples: 12,
            val_samples: 2,
            ..ToyTaskSpec::default()
        };
        let task = build_toy_task(&spec, 23).unwrap();
        let vocab = build_answer_vocab(&task.train.answers(), 6).unwrap();
        let mut train = task.train.clone();
        train.resolve_labels(&vocab);
        let cfg = toy_model_config(&task, Variant::SalAtt);

        let run = || -> Vec<(String, Tensor)> {
            let mut store = ParamStore::new();
            register_model_params(&cfg, &mut store, 24).unwrap();
            let mut rng = RngState::seeded(25);
            for _ in 0..5 {
                let idx = sample_batch(&train.labeled_indices(), 6, &mut rng).unwrap();
                let batch: Vec<&VqaSample> = idx.iter().map(|&i| &train.samples[i]).collect();
                train_step(
                    &cfg,
                    &mut store,
                    &task.features,
                    &batch,
                    &RmspropConfig::default(),
                    &mut rng,
                )
                .unwrap();
            }
            store.snapshot()
        };
        let a = run();
        let b = run();
        for ((n1, t1), (n2, t2)) in a.iter().zip(&b) {
            assert_eq!(n1, n2);
            for (x, y) in t1.data().iter().zip(t2.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{n1}");
            }
        }
    }

    #[test]
    fn early_stopper_patience_zero_stops_at_first_eval() {
        let mut stopper = EarlyStopper::new(0);
        let (improved, stop) = stopper.observe(0, 0.5);
        assert!(improved);
        assert!(stop);
    }

    #[test]
    fn early_stopper_monotone_improvement_never_stops() {
        let mut stopper = EarlyStopper::new(200);
        for k in 0..50 {
            let (improved, stop) = stopper.observe(k * 100, 0.01 * k as f64);
            assert!(improved);
            assert!(!stop);
        }
        assert_eq!(stopper.best(), (4900, 0.49));
    }

    #[test]
    fn early_stopper_plateau_stops_after_patience() {
        let mut stopper = EarlyStopper::new(300);
        assert_eq!(stopper.observe(0, 0.8), (true, false));
        assert_eq!(stopper.observe(100, 0.8), (false, false));
        assert_eq!(stopper.observe(200, 0.7), (false, false));
        let (improved, stop) = stopper.observe(300, 0.75);
        assert!(!improved);
        assert!(stop);
        assert_eq!(stopper.best(), (0, 0.8));
    }

    #[test]
    fn training_loop_returns_best_snapshot_not_last() {
        let spec = ToyTaskSpec {
            train_samples: 60,
            val_samples: 20,
            noise_sigma: 0.2,
            ..ToyTaskSpec::default()
        };
        let task = build_toy_task(&spec, 30).unwrap();
        let vocab = build_answer_vocab(&task.train.answers(), 6).unwrap();
        let mut train = task.train.clone();
        let mut val = task.val.clone();
        train.resolve_labels(&vocab);
        val.resolve_labels(&vocab);
        let cfg = toy_model_config(&task, Variant::RegAtt);
        let mut store = ParamStore::new();
        register_model_params(&cfg, &mut store, 31).unwrap();
        let profile = TrainProfile {
            batch_size: 8,
            eval_every: 10,
            patience: 50,
            max_iterations: 120,
            optimizer: RmspropConfig {
                learning_rate: 3e-3,
                ..RmspropConfig::default()
            },
        };
        let mut rng = RngState::seeded(32);
        let (state, rows) = train_with_early_stopping(
            &cfg,
            &mut store,
            &task.features,
            &train,
            &val,
            &vocab,
            &profile,
            &mut rng,
        )
        .unwrap();
        assert!(!rows.is_empty());
        // the returned best accuracy is the max of every evaluated checkpoint
        let max_row = rows
            .iter()
            .map(|r| r.val_vqa_acc)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((state.best_val_accuracy - max_row).abs() < 1e-12);
        // and re-evaluating the snapshot reproduces it exactly
        let mut best_store = ParamStore::new();
        register_model_params(&cfg, &mut best_store, 99).unwrap();
        best_store.restore(&state.best_params).unwrap();
        let summary = evaluate(&cfg, &best_store, &task.features, &val, &vocab).unwrap();
        assert!((summary.vqa_accuracy - state.best_val_accuracy).abs() < 1e-12);
    }

    #[test]
    fn training_loop_zero_iterations_evaluates_once() {
        let spec = ToyTaskSpec {
            train_samples: 10,
            val_samples: 5,
            ..ToyTaskSpec::default()
        };
        let task = build_toy_task(&spec, 33).unwrap();
        let vocab = build_answer_vocab(&task.train.answers(), 6).unwrap();
        let mut train = task.train.clone();
        let mut val = task.val.clone();
        train.resolve_labels(&vocab);
        val.resolve_labels(&vocab);
        let cfg = toy_model_config(&task, Variant::Holistic);
        let mut store = ParamStore::new();
        register_model_params(&cfg, &mut store, 34).unwrap();
        let profile = TrainProfile {
            batch_size: 4,
            eval_every: 10,
            patience: 100,
            max_iterations: 0,
            optimizer: RmspropConfig::default(),
        };
        let mut rng = RngState::seeded(35);
        let (state, rows) = train_with_early_stopping(
            &cfg,
            &mut store,
            &task.features,
            &train,
            &val,
            &vocab,
            &profile,
            &mut rng,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].iteration, 0);
        assert_eq!(state.iteration, 0);
    }
}

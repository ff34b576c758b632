//! The five model variants.
//!
//! * `SalAtt` — region pre-selection by a 1-unit bidirectional LSTM whose
//!   softmax-normalized scalar outputs scale the region features, followed by
//!   element-wise-multiplication attention with columnwise max pooling.
//! * `RegAtt` — same attention, no pre-selection.
//! * `ConAtt` — pre-selection by a weight-sharing linear map over regions
//!   instead of the BiLSTM, so no cross-region information flows.
//! * `TraAtt` — traditional soft attention: inner-product scores, softmax
//!   weights, weighted sum of region vectors, concatenated with the question.
//! * `Holistic` — no attention: the mean region feature fused with the
//!   question by element-wise multiplication.
//!
//! All variants share the question encoder (stacked LSTM; the representation
//! is the concatenated final hidden and cell states of every layer), the
//! common-space maps (affine + tanh on both branches) and the linear
//! classifier.

use crate::error::{Error, Result};
use crate::gradcheck::relative_error;
use crate::params::{ParamStore, TapeBinding};
use crate::recurrent::{bilstm_forward, question_final_encoding, BiLstmParams, LstmCellParams};
use crate::recurrent::{register_bilstm, register_lstm_cell};
use crate::region::{RegionFeatureBlock, RegionGrid};
use crate::rng::RngState;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub use crate::tape::Mode;

/// Uniform init radius for weight matrices and the embedding table.
pub const WEIGHT_INIT_RADIUS: f64 = 0.08;

/// Evaluation point for gradient checks: every parameter re-drawn from
/// U[-0.7, 0.7) on this fixed seed. See [`crate::params::ParamStore::randomize`].
pub const GRADCHECK_RADIUS: f64 = 0.7;
pub const GRADCHECK_SEED: u64 = 4242;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    SalAtt,
    Holistic,
    TraAtt,
    RegAtt,
    ConAtt,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::SalAtt,
        Variant::Holistic,
        Variant::TraAtt,
        Variant::RegAtt,
        Variant::ConAtt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::SalAtt => "SalAtt",
            Variant::Holistic => "Holistic",
            Variant::TraAtt => "TraAtt",
            Variant::RegAtt => "RegAtt",
            Variant::ConAtt => "ConAtt",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Variant::ALL
            .iter()
            .find(|v| v.name().to_ascii_lowercase() == lower)
            .copied()
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown variant `{s}`; expected one of SalAtt, Holistic, TraAtt, RegAtt, ConAtt"
                ))
            })
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Region feature dimension.
    pub feature_dim: usize,
    pub embed_dim: usize,
    /// Question LSTM layers.
    pub question_layers: usize,
    /// Question LSTM hidden units per layer.
    pub question_hidden: usize,
    /// Common fusion space dimension.
    pub common_dim: usize,
    pub vocab_size: usize,
    pub answer_count: usize,
    pub dropout_rate: f64,
    pub grid: RegionGrid,
    /// Optional per-region L2 normalization of incoming features.
    pub normalize_features: bool,
}

impl ModelConfig {
    /// Question representation dimension: twice layers times hidden units
    /// (final h and c of every layer).
    pub fn question_dim(&self) -> usize {
        2 * self.question_layers * self.question_hidden
    }

    /// Classifier input width; TraAtt concatenates the attended visual vector
    /// with the mapped question, doubling it.
    pub fn classifier_input_dim(&self) -> usize {
        match self.variant {
            Variant::TraAtt => 2 * self.common_dim,
            _ => self.common_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("question_layers", self.question_layers),
            ("question_hidden", self.question_hidden),
            ("common_dim", self.common_dim),
            ("vocab_size", self.vocab_size),
            ("answer_count", self.answer_count),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Register every trainable tensor of a variant into `store`. Weight values
/// are drawn from U[-0.08, 0.08) on a stream derived from the tensor name, so
/// blocks shared between variants initialize identically for a given seed.
/// Biases start at zero.
pub fn register_model_params(cfg: &ModelConfig, store: &mut ParamStore, seed: u64) -> Result<()> {
    cfg.validate()?;
    let root = RngState::seeded(seed);
    let r = WEIGHT_INIT_RADIUS;

    let mut er = root.derive("embedding");
    store.register(
        "embedding",
        Tensor::uniform(vec![cfg.vocab_size, cfg.embed_dim], -r, r, &mut er),
    )?;

    for layer in 0..cfg.question_layers {
        let input = if layer == 0 {
            cfg.embed_dim
        } else {
            cfg.question_hidden
        };
        register_lstm_cell(
            store,
            &format!("question.layer{layer}"),
            input,
            cfg.question_hidden,
            r,
            &root,
        )?;
    }

    match cfg.variant {
        Variant::SalAtt => {
            register_bilstm(store, "preselect", cfg.feature_dim, 1, r, &root)?;
        }
        Variant::ConAtt => {
            let mut cr = root.derive("preselect.conv.weight");
            store.register(
                "preselect.conv.weight",
                Tensor::uniform(vec![1, cfg.feature_dim], -r, r, &mut cr),
            )?;
            store.register("preselect.conv.bias", Tensor::zeros(vec![1]))?;
        }
        _ => {}
    }

    let mut vr = root.derive("visual_map.weight");
    store.register(
        "visual_map.weight",
        Tensor::uniform(vec![cfg.common_dim, cfg.feature_dim], -r, r, &mut vr),
    )?;
    store.register("visual_map.bias", Tensor::zeros(vec![cfg.common_dim]))?;

    let mut qr = root.derive("question_map.weight");
    store.register(
        "question_map.weight",
        Tensor::uniform(vec![cfg.common_dim, cfg.question_dim()], -r, r, &mut qr),
    )?;
    store.register("question_map.bias", Tensor::zeros(vec![cfg.common_dim]))?;

    let mut kr = root.derive("classifier.weight");
    store.register(
        "classifier.weight",
        Tensor::uniform(
            vec![cfg.answer_count, cfg.classifier_input_dim()],
            -r,
            r,
            &mut kr,
        ),
    )?;
    store.register("classifier.bias", Tensor::zeros(vec![cfg.answer_count]))?;
    Ok(())
}

/// The model's parameters bound as leaves on one tape.
#[derive(Debug)]
pub struct BoundModel {
    pub embedding: NodeId,
    pub question_layers: Vec<LstmCellParams>,
    pub preselect: Preselect,
    pub visual_map: Affine,
    pub question_map: Affine,
    pub classifier: Affine,
}

#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub weight: NodeId,
    pub bias: NodeId,
}

#[derive(Debug)]
pub enum Preselect {
    None,
    BiLstm(BiLstmParams),
    Conv(Affine),
}

impl BoundModel {
    pub fn bind(cfg: &ModelConfig, binding: &TapeBinding) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.question_layers);
        for layer in 0..cfg.question_layers {
            layers.push(LstmCellParams::bind(
                binding,
                &format!("question.layer{layer}"),
            )?);
        }
        let preselect = match cfg.variant {
            Variant::SalAtt => Preselect::BiLstm(BiLstmParams::bind(binding, "preselect")?),
            Variant::ConAtt => Preselect::Conv(Affine {
                weight: binding.id("preselect.conv.weight")?,
                bias: binding.id("preselect.conv.bias")?,
            }),
            _ => Preselect::None,
        };
        Ok(BoundModel {
            embedding: binding.id("embedding")?,
            question_layers: layers,
            preselect,
            visual_map: Affine {
                weight: binding.id("visual_map.weight")?,
                bias: binding.id("visual_map.bias")?,
            },
            question_map: Affine {
                weight: binding.id("question_map.weight")?,
                bias: binding.id("question_map.bias")?,
            },
            classifier: Affine {
                weight: binding.id("classifier.weight")?,
                bias: binding.id("classifier.bias")?,
            },
        })
    }
}

/// Per-sample diagnostics emitted by [`forward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Softmax pre-selection weights over regions; absent for variants
    /// without pre-selection.
    pub preselect_weights: Option<Tensor>,
    /// Per-region contribution summary with entries in [0, 1]: the fraction
    /// of common-space columns a region wins under max pooling, the softmax
    /// attention weights for TraAtt, or uniform for Holistic.
    pub attention_map: Tensor,
    pub logits: Tensor,
}

/// A forward pass: display-ready trace plus the logits node for building a
/// loss on the same tape.
#[derive(Debug)]
pub struct ForwardPass {
    pub trace: ForwardTrace,
    pub logits_id: NodeId,
}

/// Softmax over the 1-unit BiLSTM outputs along the row-major region
/// sequence.
pub fn preselect_weights(tape: &mut Tape, p: &BiLstmParams, features: NodeId) -> Result<NodeId> {
    let n = tape.value(features).rows();
    let rows: Vec<NodeId> = (0..n)
        .map(|i| tape.row(features, i))
        .collect::<Result<_>>()?;
    let outputs = bilstm_forward(tape, p, &rows)?;
    let scores = tape.concat(&outputs)?;
    tape.softmax(scores)
}

/// Scale region row i by weights[i].
pub fn apply_preselection(tape: &mut Tape, weights: NodeId, features: NodeId) -> Result<NodeId> {
    tape.scale_rows(features, weights)
}

/// Shared linear map per region followed by softmax. Permuting the regions
/// permutes these weights identically, unlike the BiLSTM path.
pub fn conv_preselect_weights(tape: &mut Tape, conv: &Affine, features: NodeId) -> Result<NodeId> {
    let n = tape.value(features).rows();
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let row = tape.row(features, i)?;
        let s = tape.matmul(conv.weight, row)?;
        scores.push(tape.add(s, conv.bias)?);
    }
    let scores = tape.concat(&scores)?;
    tape.softmax(scores)
}

struct FusionCtx<'a> {
    cfg: &'a ModelConfig,
    mode: Mode,
}

impl FusionCtx<'_> {
    fn dropout(&self, tape: &mut Tape, x: NodeId, rng: &mut RngState) -> Result<NodeId> {
        tape.dropout(x, self.cfg.dropout_rate, self.mode, rng)
    }
}

/// tanh(W x + b), with dropout after the map in train mode.
fn map_into_common(
    tape: &mut Tape,
    ctx: &FusionCtx,
    map: &Affine,
    x: NodeId,
    rng: &mut RngState,
) -> Result<NodeId> {
    let wx = tape.matmul(map.weight, x)?;
    let pre = tape.add(wx, map.bias)?;
    let activated = tape.tanh(pre);
    ctx.dropout(tape, activated, rng)
}

/// Element-wise-multiplication attention: fuse each mapped region vector with
/// the mapped question by elementwise product, then take the columnwise max
/// over regions. Returns the fused vector and the column-win fractions used
/// as the displayed attention map.
pub fn fuse_ewm_attention(
    tape: &mut Tape,
    mapped_regions: &[NodeId],
    mapped_question: NodeId,
) -> Result<(NodeId, Tensor)> {
    let fused_rows: Vec<NodeId> = mapped_regions
        .iter()
        .map(|&v| tape.ewmul(v, mapped_question))
        .collect::<Result<_>>()?;
    let stacked = tape.stack_rows(&fused_rows)?;
    let (pooled, argmax) = tape.max_pool_rows(stacked)?;
    let n = mapped_regions.len();
    let d = tape.value(pooled).len();
    let mut wins = vec![0.0; n];
    for &row in &argmax {
        wins[row] += 1.0;
    }
    for w in &mut wins {
        *w /= d as f64;
    }
    Ok((pooled, Tensor::from_vec(wins)))
}

/// Traditional attention: inner-product scores, softmax weights, weighted sum
/// of the mapped region vectors, concatenated with the mapped question.
pub fn fuse_traditional_attention(
    tape: &mut Tape,
    mapped_regions: &[NodeId],
    mapped_question: NodeId,
) -> Result<(NodeId, Tensor)> {
    let scores: Vec<NodeId> = mapped_regions
        .iter()
        .map(|&v| {
            let prod = tape.ewmul(v, mapped_question)?;
            Ok(tape.sum(prod))
        })
        .collect::<Result<_>>()?;
    let scores = tape.concat(&scores)?;
    let alpha = tape.softmax(scores)?;
    let stacked = tape.stack_rows(mapped_regions)?;
    let weighted = tape.scale_rows(stacked, alpha)?;
    let mean = tape.mean_rows(weighted)?;
    let attended = tape.scale(mean, mapped_regions.len() as f64);
    let out = tape.concat(&[attended, mapped_question])?;
    let alpha_value = tape.value(alpha).clone();
    Ok((out, alpha_value))
}

/// Holistic baseline: mean region feature, mapped and fused elementwise.
fn fuse_holistic(
    tape: &mut Tape,
    ctx: &FusionCtx,
    visual_map: &Affine,
    features: NodeId,
    mapped_question: NodeId,
    rng: &mut RngState,
) -> Result<NodeId> {
    let mean = tape.mean_rows(features)?;
    let v = map_into_common(tape, ctx, visual_map, mean, rng)?;
    tape.ewmul(v, mapped_question)
}

/// Affine map to answer logits; softmax is applied only inside the loss or at
/// prediction time.
pub fn classify(tape: &mut Tape, classifier: &Affine, fused: NodeId) -> Result<NodeId> {
    let wx = tape.matmul(classifier.weight, fused)?;
    tape.add(wx, classifier.bias)
}

/// Look up (and in train mode, drop out) the embedding row of each token.
/// Out-of-vocabulary ids map to the reserved UNK row 0.
fn embed_tokens(
    tape: &mut Tape,
    ctx: &FusionCtx,
    embedding: NodeId,
    tokens: &[usize],
    rng: &mut RngState,
) -> Result<Vec<NodeId>> {
    if tokens.is_empty() {
        return Err(Error::argument("question has no tokens"));
    }
    let vocab = tape.value(embedding).rows();
    tokens
        .iter()
        .map(|&t| {
            let id = if t < vocab { t } else { 0 };
            let row = tape.row(embedding, id)?;
            ctx.dropout(tape, row, rng)
        })
        .collect()
}

/// Run one sample through a variant. The caller owns the tape (so it can
/// attach a loss) and the parameter binding.
pub fn forward(
    tape: &mut Tape,
    cfg: &ModelConfig,
    model: &BoundModel,
    block: &RegionFeatureBlock,
    tokens: &[usize],
    mode: Mode,
    rng: &mut RngState,
) -> Result<ForwardPass> {
    if block.feature_dim != cfg.feature_dim || block.grid != cfg.grid {
        return Err(Error::config(format!(
            "sample features are {}x{} ({} regions/side), config expects {}x{} ({} regions/side)",
            block.grid.region_total(),
            block.feature_dim,
            block.grid.regions_per_side(),
            cfg.grid.region_total(),
            cfg.feature_dim,
            cfg.grid.regions_per_side(),
        )));
    }
    let ctx = FusionCtx { cfg, mode };

    let features = if cfg.normalize_features {
        let mut b = block.clone();
        b.l2_normalize();
        tape.leaf(b.features)
    } else {
        tape.leaf(block.features.clone())
    };

    // question branch
    let embedded = embed_tokens(tape, &ctx, model.embedding, tokens, rng)?;
    let q_enc = question_final_encoding(tape, &model.question_layers, &embedded)?;
    let mapped_question = map_into_common(tape, &ctx, &model.question_map, q_enc, rng)?;

    // visual branch + fusion, per variant
    let n = cfg.grid.region_total();
    let map_rows = |tape: &mut Tape, matrix: NodeId, rng: &mut RngState| -> Result<Vec<NodeId>> {
        (0..n)
            .map(|i| {
                let row = tape.row(matrix, i)?;
                map_into_common(tape, &ctx, &model.visual_map, row, rng)
            })
            .collect()
    };

    let (fused, preselect_trace, attention_map) = match (&cfg.variant, &model.preselect) {
        (Variant::SalAtt, Preselect::BiLstm(p)) => {
            let weights = preselect_weights(tape, p, features)?;
            let selected = apply_preselection(tape, weights, features)?;
            let regions = map_rows(tape, selected, rng)?;
            let (fused, map) = fuse_ewm_attention(tape, &regions, mapped_question)?;
            (fused, Some(tape.value(weights).clone()), map)
        }
        (Variant::ConAtt, Preselect::Conv(conv)) => {
            let weights = conv_preselect_weights(tape, conv, features)?;
            let selected = apply_preselection(tape, weights, features)?;
            let regions = map_rows(tape, selected, rng)?;
            let (fused, map) = fuse_ewm_attention(tape, &regions, mapped_question)?;
            (fused, Some(tape.value(weights).clone()), map)
        }
        (Variant::RegAtt, Preselect::None) => {
            let regions = map_rows(tape, features, rng)?;
            let (fused, map) = fuse_ewm_attention(tape, &regions, mapped_question)?;
            (fused, None, map)
        }
        (Variant::TraAtt, Preselect::None) => {
            let regions = map_rows(tape, features, rng)?;
            let (fused, alpha) = fuse_traditional_attention(tape, &regions, mapped_question)?;
            (fused, None, alpha)
        }
        (Variant::Holistic, Preselect::None) => {
            let fused =
                fuse_holistic(tape, &ctx, &model.visual_map, features, mapped_question, rng)?;
            let uniform = Tensor::from_vec(vec![1.0 / n as f64; n]);
            (fused, None, uniform)
        }
        _ => {
            return Err(Error::config(format!(
                "variant {} bound with mismatched pre-selection parameters",
                cfg.variant
            )))
        }
    };

    let logits_id = classify(tape, &model.classifier, fused)?;
    Ok(ForwardPass {
        trace: ForwardTrace {
            preselect_weights: preselect_trace,
            attention_map,
            logits: tape.value(logits_id).clone(),
        },
        logits_id,
    })
}

/// Cross-entropy of one eval-mode forward pass; the scalar the gradient check
/// differentiates.
fn sample_loss(
    cfg: &ModelConfig,
    store: &ParamStore,
    block: &RegionFeatureBlock,
    tokens: &[usize],
    label: usize,
) -> Result<f64> {
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let model = BoundModel::bind(cfg, &binding)?;
    let mut rng = RngState::seeded(0);
    let pass = forward(&mut tape, cfg, &model, block, tokens, Mode::Eval, &mut rng)?;
    let loss = tape.cross_entropy(pass.logits_id, label)?;
    let v = tape.value(loss).item();
    if !v.is_finite() {
        return Err(Error::Eval(format!("loss {v} is not finite")));
    }
    Ok(v)
}

/// Worst central-finite-difference relative error of the loss gradient, per
/// parameter tensor. Dropout is off (eval mode) so the loss is a fixed
/// function of the parameters. `corrupt` biases the analytic gradients after
/// backward and serves as the negative control for the check itself.
pub fn model_grad_check(
    cfg: &ModelConfig,
    store: &ParamStore,
    block: &RegionFeatureBlock,
    tokens: &[usize],
    label: usize,
    h: f64,
    corrupt: bool,
) -> Result<Vec<(String, f64)>> {
    // one backward gives the analytic gradient of every parameter
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let model = BoundModel::bind(cfg, &binding)?;
    let mut rng = RngState::seeded(0);
    let pass = forward(&mut tape, cfg, &model, block, tokens, Mode::Eval, &mut rng)?;
    let loss = tape.cross_entropy(pass.logits_id, label)?;
    let grads = tape.backward(loss)?;

    let mut probe = store.clone();
    let mut report = Vec::with_capacity(store.len());
    for name in store.names().to_vec() {
        let original = store.value(&name)?.clone();
        let mut analytic = grads
            .get(binding.id(&name)?)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(original.shape().to_vec()));
        if corrupt {
            analytic.data_mut()[0] += 0.5;
        }
        let mut worst = 0.0f64;
        for i in 0..original.len() {
            let mut plus = original.clone();
            plus.data_mut()[i] += h;
            probe.set_value(&name, plus)?;
            let f_plus = sample_loss(cfg, &probe, block, tokens, label)?;

            let mut minus = original.clone();
            minus.data_mut()[i] -= h;
            probe.set_value(&name, minus)?;
            let f_minus = sample_loss(cfg, &probe, block, tokens, label)?;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic.data()[i], numeric));
        }
        probe.set_value(&name, original)?;
        report.push((name, worst));
    }
    Ok(report)
}

//! From-scratch implementation of a saliency-pre-selection +
//! element-wise-multiplication attention architecture for visual question
//! answering, together with the four baseline variants it is compared
//! against, a tensor/reverse-mode-autodiff engine, a synthetic toy task, and
//! the training/evaluation machinery around them.
//!
//! The pipeline, end to end: an image's overlapping region features are
//! weighted by a softmax over the per-region scalar outputs of a 1-unit
//! bidirectional LSTM (the "interest" pre-selection); the question is encoded
//! by a stacked LSTM; both sides are mapped into a common space where fusion
//! is an element-wise product per region followed by columnwise max pooling;
//! a linear classifier picks the answer.

pub mod error;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod recurrent;
pub mod region;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, relative_error};
pub use model::{ForwardPass, ForwardTrace, Mode, ModelConfig, Variant};
pub use params::{ParamStore, RmspropConfig, TapeBinding};
pub use recurrent::{BiLstmParams, LstmCellParams, LstmState};
pub use region::{RegionFeatureBlock, RegionGrid, SynthGenerator, SynthSpec};
pub use rng::RngState;
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
pub use train::{AnswerVocab, Dataset, EvalSummary, TrainProfile, TrainState, VqaSample};


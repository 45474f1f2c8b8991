//! Margin-based preference optimization on toy language models.
//!
//! The crate provides the unified margin loss family and its concrete
//! algorithms, two small language models with exact gradients, gradient
//! entanglement diagnostics, training loops (vanilla, normalized and sparse),
//! synthetic preference data, executable theorem checks and a config-driven
//! experiment runner.

pub mod data;
pub mod diag;
pub mod error;
pub mod experiment;
pub mod loss;
pub mod model;
pub mod numeric;
pub mod optim;
pub mod theorems;

pub use data::{PreferenceTriple, ReferenceLogps, SentimentVocab, Style};
pub use diag::{Case, GradReport, TokenHeatmap};
pub use error::{Error, Result};
pub use experiment::{run, ExperimentConfig};
pub use loss::{Algorithm, LossConfig, LossContext, LossSpec};
pub use model::{GradientVector, HiddenProvider, LanguageModel, LinearHeadLM, LogitsLM, ParamShape};
pub use optim::{train, MaskState, Mode, SparseParams, TrainConfig, TrainTrace};

//! The toy fusion transformer: image pseudo-tokens, prompt tokens and a
//! trailing score-query token, with a `K`-bin linear head on the score
//! token's final hidden state.

mod config;
mod train;
mod transformer;
mod vocab;

use thiserror::Error;

use crate::binning::BinError;
use crate::metrics::MetricError;
use crate::nn::NnError;

pub use config::{HeadSource, ModelConfig, TrainConfig};
pub use train::{evaluate, example_loss_and_gradient, predict_all, train, Example, TrainOutcome};
pub use transformer::{forward, predict_score, ModelParams};
pub use vocab::{tokenize, Vocabulary, PAD_ID, SCORE_ID, UNK_ID};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("image features have length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("token id {id} outside vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("bin spec has {spec} bins but the model head has {config}")]
    KMismatch { spec: usize, config: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("parameter {0} missing or misshapen")]
    BadParameter(String),
    #[error("vocabulary file: {0}")]
    Vocabulary(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Bins(#[from] BinError),
    #[error(transparent)]
    Metrics(#[from] MetricError),
}

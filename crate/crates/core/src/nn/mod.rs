//! Minimal differentiable compute for the fusion transformer: dense algebra,
//! attention, cross-entropy, reverse-mode gradients, Adam and a warmup-cosine
//! learning-rate schedule. Everything runs in `f64`.

pub mod checkpoint;
mod gradcheck;
pub mod ops;
mod optim;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{check_gradients, entry_ok, GradCheckReport};
pub use optim::{adam_step, lr_at, AdamConfig, AdamState, LrSchedule};
pub use tape::{Gradients, ParamId, ParamSet, Tape, Var};
pub use tensor::TensorBuffer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("index {index} out of range for {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("backward called before any forward computation")]
    BackwardBeforeForward,
    #[error("step {step} outside schedule of {total} steps")]
    StepOutOfRange { step: usize, total: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

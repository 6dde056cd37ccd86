//! Regression via transformer-based bin classification.
//!
//! Continuous targets are discretized into `K` uniform bins, a small fusion
//! transformer classifies image features plus prompt tokens into those bins,
//! and predictions are decoded as the probability-weighted mean of bin
//! centers. The [`harness`] module runs the prompt-ablation experiments on
//! synthetic data with controlled group bias and title semantics.

// Validation uses `!(a < b)` so NaN is rejected along with out-of-order values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binning;
pub mod data;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;

pub use binning::{build_bins, decode_distribution, encode_value, quantize_targets, BinError, BinSpec};
pub use data::{Dataset, DatasetHeader, PromptTransform, SampleRecord, SynthSpec};
pub use harness::{ExperimentConfig, HarnessError, PromptMode};
pub use metrics::{fractional_ranks, grouped_metrics, plcc, srcc, MetricError, MetricReport};
pub use model::{ModelConfig, ModelParams, TrainConfig, Vocabulary};

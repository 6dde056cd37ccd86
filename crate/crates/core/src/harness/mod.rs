//! Experiment orchestration: single runs, bin sweeps, the prompt ablation
//! ladder, train-by-eval matrices, per-group decomposition, prompt-gated
//! multitask training and paraphrase evaluation. Every experiment writes CSV
//! tables whose rows carry the manifest hash of the run that produced them.

mod config;
mod experiments;
mod manifest;
mod run;
mod table;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binning::BinError;
use crate::data::DataError;
use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::nn::NnError;

pub use config::{BinsConfig, DatasetConfig, DatasetKind, ExperimentConfig, ShuffleLevel};
pub use experiments::{
    ablation_ladder, bin_sweep, decompose, decomposition_report, paraphrase_eval, paraphrase_experiment,
    prompt_gated_multitask, train_eval_matrix, DecomposeResult, DecompositionReport, DecompositionRow,
    DecompositionTags, LadderResult, MatrixResult, MatrixRow, ModeRow, MultitaskResult, MultitaskRow, ParaphraseResult,
    ParaphraseRow, SweepResult, SweepRow, ALIGNMENT_GATE, LADDER_MODES, PERCEPTUAL_GATE,
};
pub use manifest::Manifest;
pub use run::{
    bin_spec, encode_examples, eval_saved, evaluate_model, fit, load_splits, prompt_transform, run_single,
    transform_splits, RunResult, Splits, TrainedModel,
};
pub use table::{Spread, Table};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bins(#[from] BinError),
    #[error(transparent)]
    Metrics(#[from] MetricError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io: {0}")]
    Io(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<HarnessError>,
    },
}

impl HarnessError {
    pub fn context(self, context: impl Into<String>) -> Self {
        HarnessError::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Short machine-readable category of the innermost error.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Data(_) => "data",
            HarnessError::Model(_) => "model",
            HarnessError::Bins(_) => "bins",
            HarnessError::Metrics(_) => "metrics",
            HarnessError::Nn(_) => "nn",
            HarnessError::Io(_) => "io",
            HarnessError::Context { source, .. } => source.kind(),
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

/// What the model sees as its prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// Empty prompt.
    ImageOnly,
    /// The record's own title or generation prompt.
    #[default]
    TrueTitle,
    /// A dense integer id per group, carrying group identity but no semantics.
    GroupId,
    /// Titles (or prompts) deranged so none keeps its own.
    ShuffledTitle,
}

impl PromptMode {
    pub const ALL: [PromptMode; 4] = [
        PromptMode::ImageOnly,
        PromptMode::TrueTitle,
        PromptMode::GroupId,
        PromptMode::ShuffledTitle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptMode::ImageOnly => "image_only",
            PromptMode::TrueTitle => "true_title",
            PromptMode::GroupId => "group_id",
            PromptMode::ShuffledTitle => "shuffled_title",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown prompt mode {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_mode_round_trips() {
        for m in PromptMode::ALL {
            assert_eq!(m.as_str().parse::<PromptMode>().unwrap(), m);
        }
        assert!("title".parse::<PromptMode>().is_err());
    }

    #[test]
    fn context_keeps_kind() {
        let e = HarnessError::Data(DataError::NoSecondTarget).context("run seed=1");
        assert_eq!(e.kind(), "data");
        assert!(e.to_string().starts_with("run seed=1: "));
    }
}

//! Dataset records, the line-delimited file format, prompt transforms and the
//! synthetic generators used by the ablation harness.

mod io;
mod record;
mod synth;
mod transforms;

use thiserror::Error;

pub use io::{
    load_paraphrase_map, load_records, paraphrase_map_to_string, parse_paraphrase_map, parse_records,
    records_to_string, save_paraphrase_map, save_records,
};
pub use record::{Dataset, DatasetHeader, SampleRecord, TargetSelect};
pub use synth::{
    adversarial_map, descriptor_pairs, generate_agiqa_like, generate_ava_like, synonym_map, SplitDataset, SynthSpec,
};
pub use transforms::{
    apply_paraphrase_map, derangement, shuffle_prompts, shuffle_titles, strip, substitute_group_ids, ParaphraseMap,
    PromptTransform,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("line {line}: expected {expected} features, got {got}")]
    FeatureLength { line: usize, expected: usize, got: usize },
    #[error("line {line}: target {value} outside [{min}, {max}]")]
    TargetOutOfRange {
        line: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("bad header: {0}")]
    Header(String),
    #[error("group {0} has inconsistent titles")]
    InconsistentGroupTitle(String),
    #[error("paraphrase map is missing {} prompt(s): {}", .0.len(), .0.join(" | "))]
    MissingParaphrase(Vec<String>),
    #[error("cannot derange {0} item(s)")]
    ImpossibleDerangement(usize),
    #[error("degenerate synthetic spec: {0}")]
    DegenerateSpec(String),
    #[error("dataset has no second target")]
    NoSecondTarget,
    #[error("io: {0}")]
    Io(String),
}

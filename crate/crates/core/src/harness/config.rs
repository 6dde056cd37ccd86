use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError, PromptMode};
use crate::data::{SynthSpec, TargetSelect};
use crate::metrics::DEFAULT_MIN_GROUP_SIZE;
use crate::model::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Grouped data with challenge titles.
    #[default]
    Ava,
    /// Dual-target data with per-group generation prompts.
    Agiqa,
    /// Train and test dataset files.
    Files,
}

/// Granularity of the shuffled-title control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleLevel {
    /// Titles permuted across groups.
    Group,
    /// Prompts permuted across records.
    Record,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Generator seed for synthetic kinds.
    pub seed: u64,
    /// Generator parameters; the kind's defaults when absent.
    pub synth: Option<SynthSpec>,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub target: TargetSelect,
    /// Defaults to `group` for grouped data and `record` for prompt data.
    pub shuffle_level: Option<ShuffleLevel>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Ava,
            seed: 0,
            synth: None,
            train_path: None,
            test_path: None,
            target: TargetSelect::Primary,
            shuffle_level: None,
        }
    }
}

impl DatasetConfig {
    pub fn synth_spec(&self) -> SynthSpec {
        self.synth.clone().unwrap_or_else(|| match self.kind {
            DatasetKind::Agiqa => SynthSpec::agiqa_default(),
            _ => SynthSpec::ava_default(),
        })
    }

    pub fn shuffle_level(&self) -> ShuffleLevel {
        self.shuffle_level.unwrap_or(match self.kind {
            DatasetKind::Agiqa => ShuffleLevel::Record,
            _ => ShuffleLevel::Group,
        })
    }
}

/// Bin range; each bound defaults to the dataset's declared score range.
/// The bin count is `model.k_bins`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BinsConfig {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub prompt_mode: PromptMode,
    /// One run per seed; the seed drives initialization, batch order and
    /// shuffled-title permutations.
    pub seeds: Vec<u64>,
    pub min_group_size: usize,
    /// Run directory (checkpoint plus vocabulary) to warm-start from.
    pub init_from: Option<PathBuf>,
    /// Output directory. Not part of the run manifest.
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bins: BinsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            prompt_mode: PromptMode::TrueTitle,
            seeds: vec![0, 1, 2],
            min_group_size: DEFAULT_MIN_GROUP_SIZE,
            init_from: None,
            out: PathBuf::from("runs"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            bins: BinsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The configuration with the output directory blanked, as hashed into
    /// manifests.
    pub fn canonical_toml(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.to_toml()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if self.min_group_size < 2 {
            return bad(format!("min_group_size {} < 2", self.min_group_size));
        }
        if self.model.k_bins < 2 {
            return bad(format!("k_bins {} < 2", self.model.k_bins));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if let (Some(lo), Some(hi)) = (self.bins.min, self.bins.max) {
            if !(lo < hi) {
                return bad(format!("bin range [{lo}, {hi}] is empty"));
            }
        }
        match self.dataset.kind {
            DatasetKind::Files => {
                if self.dataset.train_path.is_none() || self.dataset.test_path.is_none() {
                    return bad("files dataset needs train_path and test_path".into());
                }
            }
            _ => self.dataset.synth_spec().validate()?,
        }
        Ok(())
    }

    /// Default configuration for grouped (challenge-title) experiments.
    pub fn ava() -> Self {
        Self::default()
    }

    /// Default configuration for dual-target prompt experiments. Prompt
    /// dropout keeps image-only evaluation of prompt-trained models in
    /// distribution.
    pub fn agiqa() -> Self {
        Self {
            dataset: DatasetConfig {
                kind: DatasetKind::Agiqa,
                ..DatasetConfig::default()
            },
            train: TrainConfig {
                prompt_dropout: 0.1,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    /// Grouped data with enough test records per group for per-group
    /// correlations at the default minimum group size.
    pub fn decomposition() -> Self {
        let mut cfg = Self::default();
        cfg.dataset.synth = Some(SynthSpec {
            n_groups: 16,
            samples_per_group: 150,
            ..SynthSpec::ava_default()
        });
        cfg
    }
}

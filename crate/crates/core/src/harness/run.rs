use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::sha256_hex;
use super::{io_err, DatasetKind, ExperimentConfig, HarnessError, Manifest, PromptMode, ShuffleLevel, Table};
use crate::binning::{build_bins, BinSpec};
use crate::data::{
    generate_agiqa_like, generate_ava_like, load_records, records_to_string, Dataset, PromptTransform, TargetSelect,
};
use crate::metrics::{fmt_f64, MetricReport};
use crate::model::{self, tokenize, Example, ModelConfig, ModelParams, Vocabulary};
use crate::nn::checkpoint;

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits, HarnessError> {
    let d = &cfg.dataset;
    let (train, test) = match d.kind {
        DatasetKind::Ava => {
            let s = generate_ava_like(&d.synth_spec(), d.seed)?;
            (s.train, s.test)
        }
        DatasetKind::Agiqa => {
            let s = generate_agiqa_like(&d.synth_spec(), d.seed)?;
            (s.train, s.test)
        }
        DatasetKind::Files => {
            let missing = || HarnessError::Config("files dataset needs train_path and test_path".into());
            let train = load_records(d.train_path.as_deref().ok_or_else(missing)?)?;
            let test = load_records(d.test_path.as_deref().ok_or_else(missing)?)?;
            if train.header != test.header {
                return Err(HarnessError::Config("train and test headers differ".into()));
            }
            (train, test)
        }
    };
    if d.target == TargetSelect::Secondary && !train.header.has_target2 {
        return Err(crate::data::DataError::NoSecondTarget.into());
    }
    Ok(Splits { train, test })
}

pub fn prompt_transform(mode: PromptMode, level: ShuffleLevel, seed: u64) -> PromptTransform {
    match (mode, level) {
        (PromptMode::ImageOnly, _) => PromptTransform::Strip,
        (PromptMode::TrueTitle, _) => PromptTransform::Identity,
        (PromptMode::GroupId, _) => PromptTransform::SubstituteGroupIds,
        (PromptMode::ShuffledTitle, ShuffleLevel::Group) => PromptTransform::ShuffleTitles { seed },
        (PromptMode::ShuffledTitle, ShuffleLevel::Record) => PromptTransform::ShufflePrompts { seed },
    }
}

/// Applies `transform` to train and test jointly, so group ids and shuffled
/// titles agree across the split.
pub fn transform_splits(splits: &Splits, transform: &PromptTransform) -> Result<Splits, HarnessError> {
    let joint = transform.apply(&splits.train.concat(&splits.test)?)?;
    let (train, test) = joint.split_at(splits.train.len());
    Ok(Splits { train, test })
}

pub fn encode_examples(vocab: &Vocabulary, ds: &Dataset, target: TargetSelect) -> Result<Vec<Example>, HarnessError> {
    let targets = ds.targets(target)?;
    Ok(ds
        .records
        .iter()
        .zip(targets)
        .map(|(r, t)| Example {
            features: r.image_features.clone(),
            prompt_ids: tokenize(vocab, &r.prompt),
            target: t,
        })
        .collect())
}

/// A trained model with everything needed to score new records.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub spec: BinSpec,
    pub loss_trace: Vec<f64>,
    pub steps: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelCard {
    bin_min: f64,
    bin_max: f64,
    model: ModelConfig,
}

const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
const VOCAB_FILE: &str = "vocab.txt";
const CARD_FILE: &str = "model.toml";

impl TrainedModel {
    pub fn save(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let card = ModelCard {
            bin_min: self.spec.min_value(),
            bin_max: self.spec.max_value(),
            model: self.config.clone(),
        };
        let card = toml::to_string(&card).map_err(|e| HarnessError::Config(e.to_string()))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| io_err(&path, e))
        };
        write(CARD_FILE, card)?;
        write(VOCAB_FILE, self.vocab.to_text())?;
        write(CHECKPOINT_FILE, self.params.to_checkpoint())
    }

    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))
        };
        let card: ModelCard = toml::from_str(&read(CARD_FILE)?).map_err(|e| HarnessError::Config(e.to_string()))?;
        let vocab = Vocabulary::from_text(&read(VOCAB_FILE)?)?;
        let set = checkpoint::from_str(&read(CHECKPOINT_FILE)?)?;
        let params = ModelParams::from_param_set(&card.model, set)?;
        Ok(Self {
            spec: build_bins(card.bin_min, card.bin_max, card.model.k_bins)?,
            config: card.model,
            params,
            vocab,
            loss_trace: Vec::new(),
            steps: 0,
        })
    }

    pub fn predict(&self, ds: &Dataset) -> Result<Vec<f64>, HarnessError> {
        let examples = encode_examples(&self.vocab, ds, TargetSelect::Primary)?;
        Ok(model::predict_all(&self.config, &self.params, &self.spec, &examples)?)
    }
}

pub fn bin_spec(cfg: &ExperimentConfig, ds: &Dataset) -> Result<BinSpec, HarnessError> {
    let lo = cfg.bins.min.unwrap_or(ds.header.score_min);
    let hi = cfg.bins.max.unwrap_or(ds.header.score_max);
    Ok(build_bins(lo, hi, cfg.model.k_bins)?)
}

/// Trains a fresh (or warm-started) model on `train` with run seed `seed`.
pub fn fit(
    cfg: &ExperimentConfig,
    seed: u64,
    train: &Dataset,
    target: TargetSelect,
) -> Result<TrainedModel, HarnessError> {
    let spec = bin_spec(cfg, train)?;
    let (config, params, vocab) = match &cfg.init_from {
        Some(dir) => {
            let warm = TrainedModel::load(dir)?;
            if warm.config.k_bins != cfg.model.k_bins || warm.config.d_input != train.header.d_input {
                return Err(HarnessError::Config(format!(
                    "warm start from {} has incompatible bins or feature size",
                    dir.display()
                )));
            }
            (warm.config, warm.params, warm.vocab)
        }
        None => {
            let vocab = Vocabulary::build(train.prompts(), cfg.model.max_prompt_tokens);
            let config = ModelConfig {
                d_input: train.header.d_input,
                vocab_size: vocab.len(),
                ..cfg.model.clone()
            };
            let params = ModelParams::init(&config, seed)?;
            (config, params, vocab)
        }
    };
    let examples = encode_examples(&vocab, train, target)?;
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    let outcome = model::train(&config, params, &spec, &examples, &tc)?;
    Ok(TrainedModel {
        config,
        params: outcome.params,
        vocab,
        spec,
        loss_trace: outcome.loss_trace,
        steps: outcome.steps,
    })
}

pub fn evaluate_model(
    model: &TrainedModel,
    ds: &Dataset,
    target: TargetSelect,
    min_group_size: usize,
) -> Result<(Vec<f64>, MetricReport), HarnessError> {
    let examples = encode_examples(&model.vocab, ds, target)?;
    let groups = ds.groups();
    Ok(model::evaluate(
        &model.config,
        &model.params,
        &model.spec,
        &examples,
        &groups,
        min_group_size,
    )?)
}

/// Everything one trained-and-evaluated condition produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub manifest: Manifest,
    pub manifest_hash: String,
    pub prompt_mode: PromptMode,
    pub probe: bool,
    pub seed: u64,
    pub target: TargetSelect,
    pub model: TrainedModel,
    /// Test set as the model saw it (after the prompt transform).
    pub test: Dataset,
    pub predictions: Vec<f64>,
    pub report: MetricReport,
}

pub(crate) fn run_manifest(
    cfg: &ExperimentConfig,
    seed: u64,
    transform: &PromptTransform,
    splits: &Splits,
) -> Result<Manifest, HarnessError> {
    let mut m = Manifest::new()
        .with("seed", seed)
        .with("prompt_mode", cfg.prompt_mode)
        .with("probe", cfg.train.probe)
        .with("transform", transform.name())
        .with("target", format!("{:?}", cfg.dataset.target).to_lowercase())
        .with("train_sha256", sha256_hex(records_to_string(&splits.train).as_bytes()))
        .with("test_sha256", sha256_hex(records_to_string(&splits.test).as_bytes()));
    if let Some(dir) = &cfg.init_from {
        let path = dir.join(CHECKPOINT_FILE);
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        m.push("init_sha256", sha256_hex(&bytes));
    }
    m.push("config", cfg.canonical_toml());
    Ok(m)
}

/// Train under `cfg.prompt_mode` with run seed `seed` and evaluate on the
/// transformed test split.
pub fn run_single(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult, HarnessError> {
    let ctx = format!("run prompt_mode={} seed={seed}", cfg.prompt_mode);
    let inner = || -> Result<RunResult, HarnessError> {
        cfg.validate()?;
        let transform = prompt_transform(cfg.prompt_mode, cfg.dataset.shuffle_level(), seed);
        let splits = transform_splits(&load_splits(cfg)?, &transform)?;
        let manifest = run_manifest(cfg, seed, &transform, &splits)?;
        let model = fit(cfg, seed, &splits.train, cfg.dataset.target)?;
        let (predictions, report) = evaluate_model(&model, &splits.test, cfg.dataset.target, cfg.min_group_size)?;
        Ok(RunResult {
            manifest_hash: manifest.hash(),
            manifest,
            prompt_mode: cfg.prompt_mode,
            probe: cfg.train.probe,
            seed,
            target: cfg.dataset.target,
            model,
            test: splits.test,
            predictions,
            report,
        })
    };
    inner().map_err(|e| e.context(ctx))
}

/// Scores a saved model on the test split of `cfg`, transformed under
/// `cfg.prompt_mode` with run seed `seed`. The manifest additionally records
/// the checkpoint digest.
pub fn eval_saved(cfg: &ExperimentConfig, seed: u64, model_dir: &Path) -> Result<RunResult, HarnessError> {
    let ctx = format!(
        "eval {} prompt_mode={} seed={seed}",
        model_dir.display(),
        cfg.prompt_mode
    );
    let inner = || -> Result<RunResult, HarnessError> {
        cfg.validate()?;
        let model = TrainedModel::load(model_dir)?;
        let transform = prompt_transform(cfg.prompt_mode, cfg.dataset.shuffle_level(), seed);
        let splits = transform_splits(&load_splits(cfg)?, &transform)?;
        let mut manifest = run_manifest(cfg, seed, &transform, &splits)?;
        manifest.push("model_sha256", sha256_hex(model.params.to_checkpoint().as_bytes()));
        let (predictions, report) = evaluate_model(&model, &splits.test, cfg.dataset.target, cfg.min_group_size)?;
        Ok(RunResult {
            manifest_hash: manifest.hash(),
            manifest,
            prompt_mode: cfg.prompt_mode,
            probe: cfg.train.probe,
            seed,
            target: cfg.dataset.target,
            model,
            test: splits.test,
            predictions,
            report,
        })
    };
    inner().map_err(|e| e.context(ctx))
}

fn tag_cells(r: &RunResult) -> [String; 4] {
    [
        r.manifest_hash.clone(),
        r.prompt_mode.to_string(),
        r.probe.to_string(),
        r.seed.to_string(),
    ]
}

const TAG_HEADER: [&str; 4] = ["manifest_hash", "prompt_mode", "probe", "seed"];

fn with_tags(extra: &[&str]) -> Vec<String> {
    TAG_HEADER.iter().chain(extra).map(|s| s.to_string()).collect()
}

impl RunResult {
    /// Overall row, then one row per group that met the size threshold.
    pub fn report_table(&self) -> Table {
        let mut t = Table::new(&with_tags(&["group", "n", "srcc", "plcc", "mean_pred", "mean_true"]));
        let r = &self.report;
        let mut row = tag_cells(self).to_vec();
        row.extend([
            "overall".to_string(),
            r.n.to_string(),
            fmt_f64(r.srcc),
            fmt_f64(r.plcc),
            fmt_f64(r.mean_pred),
            fmt_f64(r.mean_true),
        ]);
        t.push(row);
        for (group, g) in &r.per_group {
            let mut row = tag_cells(self).to_vec();
            row.extend([
                group.clone(),
                g.n.to_string(),
                g.srcc.map(fmt_f64).unwrap_or_default(),
                g.plcc.map(fmt_f64).unwrap_or_default(),
                fmt_f64(g.mean_pred),
                fmt_f64(g.mean_true),
            ]);
            t.push(row);
        }
        t
    }

    pub fn loss_table(&self) -> Table {
        let mut t = Table::new(&with_tags(&["epoch", "loss"]));
        for (i, l) in self.model.loss_trace.iter().enumerate() {
            let mut row = tag_cells(self).to_vec();
            row.extend([(i + 1).to_string(), fmt_f64(*l)]);
            t.push(row);
        }
        t
    }

    pub fn predictions_table(&self) -> Table {
        let mut t = Table::new(&with_tags(&["id", "group", "target", "prediction"]));
        // The run already resolved its target, so this cannot fail.
        let targets = self.test.targets(self.target).unwrap_or_default();
        for ((r, t_val), p) in self.test.records.iter().zip(&targets).zip(&self.predictions) {
            let mut row = tag_cells(self).to_vec();
            row.extend([r.id.clone(), r.group_id.clone(), fmt_f64(*t_val), fmt_f64(*p)]);
            t.push(row);
        }
        t
    }

    /// Writes report, loss and prediction CSVs, the manifest and the model.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        self.report_table().write(&dir.join("report.csv"))?;
        self.loss_table().write(&dir.join("loss.csv"))?;
        self.predictions_table().write(&dir.join("predictions.csv"))?;
        let path = dir.join("manifest.txt");
        std::fs::write(&path, self.manifest.to_text()).map_err(|e| io_err(&path, e))?;
        self.model.save(dir)
    }

    /// Report and prediction CSVs plus the manifest, without the model.
    pub fn write_eval(&self, dir: &Path) -> Result<(), HarnessError> {
        self.report_table().write(&dir.join("report.csv"))?;
        self.predictions_table().write(&dir.join("predictions.csv"))?;
        let path = dir.join("manifest.txt");
        std::fs::write(&path, self.manifest.to_text()).map_err(|e| io_err(&path, e))
    }
}

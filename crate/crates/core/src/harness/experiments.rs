use std::path::Path;

use rayon::prelude::*;

use super::manifest::sha256_hex;
use super::run::run_manifest;
use super::{
    evaluate_model, fit, load_splits, prompt_transform, run_single, transform_splits, ExperimentConfig, HarnessError,
    PromptMode, Splits, Spread, Table, TrainedModel,
};
use crate::data::{
    adversarial_map, apply_paraphrase_map, synonym_map, DataError, Dataset, DatasetHeader, ParaphraseMap, SampleRecord,
    TargetSelect,
};
use crate::metrics::{fmt_f64, grouped_metrics, GroupFlag};

/// Ladder conditions from least to most prompt information.
pub const LADDER_MODES: [PromptMode; 4] = [
    PromptMode::ImageOnly,
    PromptMode::GroupId,
    PromptMode::ShuffledTitle,
    PromptMode::TrueTitle,
];

/// Published full-scale SRCC for each ladder condition, carried as a
/// reference column only.
const LADDER_REFERENCE: [(PromptMode, f64); 4] = [
    (PromptMode::ImageOnly, 0.833),
    (PromptMode::GroupId, 0.851),
    (PromptMode::ShuffledTitle, 0.860),
    (PromptMode::TrueTitle, 0.899),
];

/// Published alignment SRCC for the prompt-trained model under each
/// evaluation condition.
const MATRIX_REFERENCE: [(PromptMode, f64); 3] = [
    (PromptMode::TrueTitle, 0.810),
    (PromptMode::ImageOnly, 0.687),
    (PromptMode::ShuffledTitle, 0.634),
];

fn combined_hash<'a>(hashes: impl IntoIterator<Item = &'a str>) -> String {
    let joined: Vec<&str> = hashes.into_iter().collect();
    sha256_hex(joined.join("\n").as_bytes())
}

fn task_name(t: TargetSelect) -> &'static str {
    match t {
        TargetSelect::Primary => "primary",
        TargetSelect::Secondary => "secondary",
    }
}

fn with_mode(cfg: &ExperimentConfig, mode: PromptMode) -> ExperimentConfig {
    ExperimentConfig {
        prompt_mode: mode,
        ..cfg.clone()
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub prompt_mode: PromptMode,
    pub k: usize,
    pub epochs: usize,
    pub seed: u64,
    pub srcc: f64,
    pub plcc: f64,
    pub manifest_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub probe: bool,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    fn matching(&self, mode: PromptMode, k: usize, epochs: usize) -> impl Iterator<Item = &SweepRow> {
        self.rows
            .iter()
            .filter(move |r| r.prompt_mode == mode && r.k == k && r.epochs == epochs)
    }

    /// Test SRCC over seeds for one grid cell.
    pub fn spread(&self, mode: PromptMode, k: usize, epochs: usize) -> Option<Spread> {
        Spread::of(&self.matching(mode, k, epochs).map(|r| r.srcc).collect::<Vec<_>>())
    }

    pub fn runs_table(&self) -> Table {
        let mut t = Table::new(&[
            "manifest_hash",
            "prompt_mode",
            "probe",
            "k",
            "epochs",
            "seed",
            "srcc",
            "plcc",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.manifest_hash.clone(),
                r.prompt_mode.to_string(),
                self.probe.to_string(),
                r.k.to_string(),
                r.epochs.to_string(),
                r.seed.to_string(),
                fmt_f64(r.srcc),
                fmt_f64(r.plcc),
            ]);
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&[
            "manifest_hash",
            "prompt_mode",
            "probe",
            "k",
            "epochs",
            "srcc_mean",
            "srcc_min",
            "srcc_max",
            "n_seeds",
            "plcc_mean",
        ]);
        let mut cells: Vec<(PromptMode, usize, usize)> = Vec::new();
        for r in &self.rows {
            if !cells.contains(&(r.prompt_mode, r.k, r.epochs)) {
                cells.push((r.prompt_mode, r.k, r.epochs));
            }
        }
        for (mode, k, epochs) in cells {
            let runs: Vec<&SweepRow> = self.matching(mode, k, epochs).collect();
            let srcc = Spread::of(&runs.iter().map(|r| r.srcc).collect::<Vec<_>>()).expect("non-empty cell");
            let plcc = Spread::of(&runs.iter().map(|r| r.plcc).collect::<Vec<_>>()).expect("non-empty cell");
            let mut row = vec![
                combined_hash(runs.iter().map(|r| r.manifest_hash.as_str())),
                mode.to_string(),
                self.probe.to_string(),
                k.to_string(),
                epochs.to_string(),
            ];
            row.extend(srcc.cells());
            row.push(fmt_f64(plcc.mean));
            t.push(row);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        self.runs_table().write(&dir.join("sweep_runs.csv"))?;
        self.summary_table().write(&dir.join("sweep.csv"))
    }
}

/// One run per (prompt mode, K, epochs, seed), executed in parallel and
/// assembled in grid order.
pub fn bin_sweep(
    cfg: &ExperimentConfig,
    k_values: &[usize],
    epoch_values: &[usize],
    modes: &[PromptMode],
) -> Result<SweepResult, HarnessError> {
    if k_values.len() < 2 || k_values.iter().any(|&k| k < 2) {
        return Err(HarnessError::Config(
            "sweep needs at least two bin counts, each >= 2".into(),
        ));
    }
    if epoch_values.is_empty() || epoch_values.contains(&0) || modes.is_empty() {
        return Err(HarnessError::Config(
            "sweep needs positive epochs and at least one prompt mode".into(),
        ));
    }
    let mut jobs = Vec::new();
    for &mode in modes {
        for &k in k_values {
            for &epochs in epoch_values {
                for &seed in &cfg.seeds {
                    let mut c = with_mode(cfg, mode);
                    c.model.k_bins = k;
                    c.train.epochs = epochs;
                    jobs.push((c, seed));
                }
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|(c, seed)| {
            let r = run_single(c, *seed)?;
            Ok(SweepRow {
                prompt_mode: c.prompt_mode,
                k: c.model.k_bins,
                epochs: c.train.epochs,
                seed: *seed,
                srcc: r.report.srcc,
                plcc: r.report.plcc,
                manifest_hash: r.manifest_hash,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(SweepResult {
        probe: cfg.train.probe,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeRow {
    pub prompt_mode: PromptMode,
    pub seed: u64,
    pub srcc: f64,
    pub plcc: f64,
    pub manifest_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderResult {
    pub probe: bool,
    pub rows: Vec<ModeRow>,
}

impl LadderResult {
    pub fn spread(&self, mode: PromptMode) -> Option<Spread> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.prompt_mode == mode)
            .map(|r| r.srcc)
            .collect();
        Spread::of(&v)
    }

    pub fn runs_table(&self) -> Table {
        let mut t = Table::new(&["manifest_hash", "prompt_mode", "probe", "seed", "srcc", "plcc"]);
        for r in &self.rows {
            t.push(vec![
                r.manifest_hash.clone(),
                r.prompt_mode.to_string(),
                self.probe.to_string(),
                r.seed.to_string(),
                fmt_f64(r.srcc),
                fmt_f64(r.plcc),
            ]);
        }
        t
    }

    /// One row per condition in ladder order.
    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&[
            "manifest_hash",
            "prompt_mode",
            "probe",
            "srcc_mean",
            "srcc_min",
            "srcc_max",
            "n_seeds",
            "plcc_mean",
            "reference_srcc",
        ]);
        for (mode, reference) in LADDER_REFERENCE {
            let runs: Vec<&ModeRow> = self.rows.iter().filter(|r| r.prompt_mode == mode).collect();
            let Some(srcc) = Spread::of(&runs.iter().map(|r| r.srcc).collect::<Vec<_>>()) else {
                continue;
            };
            let plcc = runs.iter().map(|r| r.plcc).sum::<f64>() / runs.len() as f64;
            let mut row = vec![
                combined_hash(runs.iter().map(|r| r.manifest_hash.as_str())),
                mode.to_string(),
                self.probe.to_string(),
            ];
            row.extend(srcc.cells());
            row.push(fmt_f64(plcc));
            row.push(format!("{reference:.3}"));
            t.push(row);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        self.runs_table().write(&dir.join("ladder_runs.csv"))?;
        self.summary_table().write(&dir.join("ladder.csv"))
    }
}

/// Trains one model per ladder condition and seed on identical data and
/// budget.
pub fn ablation_ladder(cfg: &ExperimentConfig) -> Result<LadderResult, HarnessError> {
    let jobs: Vec<(PromptMode, u64)> = LADDER_MODES
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(mode, seed)| {
            let r = run_single(&with_mode(cfg, mode), seed)?;
            Ok(ModeRow {
                prompt_mode: mode,
                seed,
                srcc: r.report.srcc,
                plcc: r.report.plcc,
                manifest_hash: r.manifest_hash,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(LadderResult {
        probe: cfg.train.probe,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionRow {
    pub group: String,
    pub n: usize,
    pub mean_true: f64,
    pub mean_pred_a: f64,
    pub mean_pred_b: f64,
    pub srcc_a: Option<f64>,
    pub srcc_b: Option<f64>,
    pub flag: Option<GroupFlag>,
}

/// Per-group comparison of two models on one test set: how well each tracks
/// group means (inter-group) and within-group order (intra-group).
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub rows: Vec<DecompositionRow>,
    pub group_mean_abs_error_a: f64,
    pub group_mean_abs_error_b: f64,
    /// Mean intra-group SRCC over unflagged groups.
    pub mean_group_srcc_a: Option<f64>,
    pub mean_group_srcc_b: Option<f64>,
}

/// Both prediction vectors must be aligned with `test.records`. Groups below
/// `min_group_size` are omitted; groups with constant targets or predictions
/// are flagged and left out of the intra-group mean.
pub fn decomposition_report(
    test: &Dataset,
    target: TargetSelect,
    preds_a: &[f64],
    preds_b: &[f64],
    min_group_size: usize,
) -> Result<DecompositionReport, HarnessError> {
    let targets = test.targets(target)?;
    let groups = test.groups();
    let a = grouped_metrics(preds_a, &targets, &groups, min_group_size)?;
    let b = grouped_metrics(preds_b, &targets, &groups, min_group_size)?;
    if a.per_group.is_empty() {
        return Err(HarnessError::Config(format!(
            "no group has at least {min_group_size} test records"
        )));
    }
    let rows = a
        .per_group
        .iter()
        .map(|(g, sa)| {
            let sb = &b.per_group[g];
            DecompositionRow {
                group: g.clone(),
                n: sa.n,
                mean_true: sa.mean_true,
                mean_pred_a: sa.mean_pred,
                mean_pred_b: sb.mean_pred,
                srcc_a: sa.srcc,
                srcc_b: sb.srcc,
                flag: sa.flag.or(sb.flag),
            }
        })
        .collect();
    Ok(DecompositionReport {
        rows,
        group_mean_abs_error_a: a.group_mean_abs_error().expect("non-empty"),
        group_mean_abs_error_b: b.group_mean_abs_error().expect("non-empty"),
        mean_group_srcc_a: a.mean_group_srcc(),
        mean_group_srcc_b: b.mean_group_srcc(),
    })
}

fn flag_name(f: Option<GroupFlag>) -> &'static str {
    match f {
        None => "",
        Some(GroupFlag::ConstantTargets) => "constant_targets",
        Some(GroupFlag::ConstantPredictions) => "constant_predictions",
    }
}

impl DecompositionReport {
    /// Per-group rows followed by the two summary rows.
    pub fn table(&self, tags: &DecompositionTags) -> Table {
        let mut t = Table::new(&[
            "manifest_hash",
            "prompt_mode_a",
            "prompt_mode_b",
            "probe",
            "seed",
            "group",
            "n",
            "mean_true",
            "mean_pred_a",
            "mean_pred_b",
            "srcc_a",
            "srcc_b",
            "flag",
        ]);
        let head = || {
            vec![
                tags.manifest_hash.clone(),
                tags.mode_a.to_string(),
                tags.mode_b.to_string(),
                tags.probe.to_string(),
                tags.seed.to_string(),
            ]
        };
        for r in &self.rows {
            let mut row = head();
            row.extend([
                r.group.clone(),
                r.n.to_string(),
                fmt_f64(r.mean_true),
                fmt_f64(r.mean_pred_a),
                fmt_f64(r.mean_pred_b),
                opt_cell(r.srcc_a),
                opt_cell(r.srcc_b),
                flag_name(r.flag).to_string(),
            ]);
            t.push(row);
        }
        // Summary rows reuse the mean_pred columns for the per-model statistic.
        let summaries = [
            (
                "summary_group_mean_abs_error",
                Some(self.group_mean_abs_error_a),
                Some(self.group_mean_abs_error_b),
            ),
            (
                "summary_mean_group_srcc",
                self.mean_group_srcc_a,
                self.mean_group_srcc_b,
            ),
        ];
        for (name, a, b) in summaries {
            let mut row = head();
            row.extend([
                name.to_string(),
                self.rows.len().to_string(),
                String::new(),
                opt_cell(a),
                opt_cell(b),
                String::new(),
                String::new(),
                String::new(),
            ]);
            t.push(row);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTags {
    pub manifest_hash: String,
    pub mode_a: PromptMode,
    pub mode_b: PromptMode,
    pub probe: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeResult {
    pub per_seed: Vec<(DecompositionTags, DecompositionReport)>,
}

impl DecomposeResult {
    pub fn mean_abs_error(&self) -> (Spread, Spread) {
        let a: Vec<f64> = self.per_seed.iter().map(|(_, r)| r.group_mean_abs_error_a).collect();
        let b: Vec<f64> = self.per_seed.iter().map(|(_, r)| r.group_mean_abs_error_b).collect();
        (Spread::of(&a).expect("seeds"), Spread::of(&b).expect("seeds"))
    }

    pub fn mean_group_srcc(&self) -> (Option<Spread>, Option<Spread>) {
        let a: Vec<f64> = self.per_seed.iter().filter_map(|(_, r)| r.mean_group_srcc_a).collect();
        let b: Vec<f64> = self.per_seed.iter().filter_map(|(_, r)| r.mean_group_srcc_b).collect();
        (Spread::of(&a), Spread::of(&b))
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&[
            "manifest_hash",
            "prompt_mode_a",
            "prompt_mode_b",
            "probe",
            "statistic",
            "a_mean",
            "a_min",
            "a_max",
            "b_mean",
            "b_min",
            "b_max",
            "n_seeds",
        ]);
        let Some((first, _)) = self.per_seed.first() else {
            return t;
        };
        let hash = combined_hash(self.per_seed.iter().map(|(tags, _)| tags.manifest_hash.as_str()));
        let (mae_a, mae_b) = self.mean_abs_error();
        let (srcc_a, srcc_b) = self.mean_group_srcc();
        let stats = [
            ("group_mean_abs_error", Some(mae_a), Some(mae_b)),
            ("mean_group_srcc", srcc_a, srcc_b),
        ];
        for (name, a, b) in stats {
            let cells = |s: Option<Spread>| match s {
                Some(s) => [fmt_f64(s.mean), fmt_f64(s.min), fmt_f64(s.max)],
                None => Default::default(),
            };
            let mut row = vec![
                hash.clone(),
                first.mode_a.to_string(),
                first.mode_b.to_string(),
                first.probe.to_string(),
                name.to_string(),
            ];
            row.extend(cells(a));
            row.extend(cells(b));
            row.push(self.per_seed.len().to_string());
            t.push(row);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        for (tags, report) in &self.per_seed {
            report
                .table(tags)
                .write(&dir.join(format!("decomposition_seed{}.csv", tags.seed)))?;
        }
        self.summary_table().write(&dir.join("decomposition.csv"))
    }
}

/// Per seed, trains an image-only model (A) and a prompt model (B, using
/// `cfg.prompt_mode`, or true titles when that is image-only) and compares
/// them group by group on the shared test records.
pub fn decompose(cfg: &ExperimentConfig) -> Result<DecomposeResult, HarnessError> {
    let mode_b = match cfg.prompt_mode {
        PromptMode::ImageOnly => PromptMode::TrueTitle,
        m => m,
    };
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let a = run_single(&with_mode(cfg, PromptMode::ImageOnly), seed)?;
            let b = run_single(&with_mode(cfg, mode_b), seed)?;
            let report = decomposition_report(
                &b.test,
                cfg.dataset.target,
                &a.predictions,
                &b.predictions,
                cfg.min_group_size,
            )?;
            let tags = DecompositionTags {
                manifest_hash: combined_hash([a.manifest_hash.as_str(), b.manifest_hash.as_str()]),
                mode_a: PromptMode::ImageOnly,
                mode_b,
                probe: cfg.train.probe,
                seed,
            };
            Ok((tags, report))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(DecomposeResult { per_seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub task: TargetSelect,
    pub train_mode: PromptMode,
    pub eval_mode: PromptMode,
    pub seed: u64,
    pub srcc: f64,
    pub plcc: f64,
    pub manifest_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixResult {
    pub probe: bool,
    pub rows: Vec<MatrixRow>,
}

impl MatrixResult {
    fn cell(&self, task: TargetSelect, train: PromptMode, eval: PromptMode) -> Vec<&MatrixRow> {
        self.rows
            .iter()
            .filter(|r| r.task == task && r.train_mode == train && r.eval_mode == eval)
            .collect()
    }

    pub fn spread(&self, task: TargetSelect, train: PromptMode, eval: PromptMode) -> Option<Spread> {
        Spread::of(&self.cell(task, train, eval).iter().map(|r| r.srcc).collect::<Vec<_>>())
    }

    pub fn runs_table(&self) -> Table {
        let mut t = Table::new(&[
            "manifest_hash",
            "task",
            "train_mode",
            "eval_mode",
            "probe",
            "seed",
            "srcc",
            "plcc",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.manifest_hash.clone(),
                task_name(r.task).into(),
                r.train_mode.to_string(),
                r.eval_mode.to_string(),
                self.probe.to_string(),
                r.seed.to_string(),
                fmt_f64(r.srcc),
                fmt_f64(r.plcc),
            ]);
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&[
            "manifest_hash",
            "task",
            "train_mode",
            "eval_mode",
            "probe",
            "srcc_mean",
            "srcc_min",
            "srcc_max",
            "n_seeds",
            "reference_srcc",
        ]);
        let mut cells: Vec<(TargetSelect, PromptMode, PromptMode)> = Vec::new();
        for r in &self.rows {
            if !cells.contains(&(r.task, r.train_mode, r.eval_mode)) {
                cells.push((r.task, r.train_mode, r.eval_mode));
            }
        }
        for (task, train, eval) in cells {
            let runs = self.cell(task, train, eval);
            let spread = Spread::of(&runs.iter().map(|r| r.srcc).collect::<Vec<_>>()).expect("non-empty");
            let reference = (task == TargetSelect::Primary && train == PromptMode::TrueTitle)
                .then(|| {
                    MATRIX_REFERENCE
                        .iter()
                        .find(|(m, _)| *m == eval)
                        .map(|(_, v)| format!("{v:.3}"))
                })
                .flatten()
                .unwrap_or_default();
            let mut row = vec![
                combined_hash(runs.iter().map(|r| r.manifest_hash.as_str())),
                task_name(task).into(),
                train.to_string(),
                eval.to_string(),
                self.probe.to_string(),
            ];
            row.extend(spread.cells());
            row.push(reference);
            t.push(row);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        self.runs_table().write(&dir.join("matrix_runs.csv"))?;
        self.summary_table().write(&dir.join("matrix.csv"))
    }
}

/// Evaluation prompts are derived from the untouched test split, so
/// "true_title" always means the real prompts whatever the training mode.
fn eval_set(cfg: &ExperimentConfig, splits: &Splits, mode: PromptMode, seed: u64) -> Result<Dataset, HarnessError> {
    let t = prompt_transform(mode, cfg.dataset.shuffle_level(), seed);
    Ok(transform_splits(splits, &t)?.test)
}

/// For each task, trains one model per training mode and seed, then scores
/// that single checkpoint under every evaluation mode.
pub fn train_eval_matrix(
    cfg: &ExperimentConfig,
    train_modes: &[PromptMode],
    eval_modes: &[PromptMode],
) -> Result<MatrixResult, HarnessError> {
    if train_modes.is_empty() || eval_modes.is_empty() {
        return Err(HarnessError::Config(
            "matrix needs training and evaluation modes".into(),
        ));
    }
    let base = load_splits(cfg)?;
    let tasks: &[TargetSelect] = if base.train.header.has_target2 {
        &[TargetSelect::Primary, TargetSelect::Secondary]
    } else {
        &[TargetSelect::Primary]
    };
    let mut jobs = Vec::new();
    for &task in tasks {
        for &mode in train_modes {
            for &seed in &cfg.seeds {
                jobs.push((task, mode, seed));
            }
        }
    }
    let blocks = jobs
        .par_iter()
        .map(|&(task, mode, seed)| {
            let mut c = with_mode(cfg, mode);
            c.dataset.target = task;
            let transform = prompt_transform(mode, c.dataset.shuffle_level(), seed);
            let splits = transform_splits(&base, &transform)?;
            let manifest = run_manifest(&c, seed, &transform, &splits)?;
            let model = fit(&c, seed, &splits.train, task)
                .map_err(|e| e.context(format!("matrix task={} train_mode={mode} seed={seed}", task_name(task))))?;
            eval_modes
                .iter()
                .map(|&eval_mode| {
                    let test = eval_set(&c, &base, eval_mode, seed)?;
                    let (_, report) = evaluate_model(&model, &test, task, c.min_group_size)?;
                    Ok(MatrixRow {
                        task,
                        train_mode: mode,
                        eval_mode,
                        seed,
                        srcc: report.srcc,
                        plcc: report.plcc,
                        manifest_hash: manifest.clone().with("eval_mode", eval_mode).hash(),
                    })
                })
                .collect::<Result<Vec<_>, HarnessError>>()
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(MatrixResult {
        probe: cfg.train.probe,
        rows: blocks.into_iter().flatten().collect(),
    })
}

pub const ALIGNMENT_GATE: &str = "task alignment";
pub const PERCEPTUAL_GATE: &str = "task perceptual";

/// Single-target copy of `ds` with `gate` (if any) prefixed to every prompt.
fn gated(ds: &Dataset, gate: Option<&str>, task: TargetSelect) -> Result<Dataset, HarnessError> {
    let targets = ds.targets(task)?;
    let records = ds
        .records
        .iter()
        .zip(targets)
        .map(|(r, t)| SampleRecord {
            id: format!("{}#{}", r.id, task_name(task)),
            prompt: match gate {
                Some(g) if r.prompt.is_empty() => g.to_string(),
                Some(g) => format!("{g} {}", r.prompt),
                None => r.prompt.clone(),
            },
            target: t,
            target2: None,
            ..r.clone()
        })
        .collect();
    let header = DatasetHeader {
        has_target2: false,
        ..ds.header
    };
    Ok(Dataset::new(header, records)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskRow {
    /// `specialist_primary`, `specialist_secondary` or `unified`.
    pub model: &'static str,
    pub task: TargetSelect,
    /// Whether evaluation prompts carried the task prefix.
    pub gated: bool,
    pub seed: u64,
    pub srcc: f64,
    pub plcc: f64,
    pub manifest_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskResult {
    pub prompt_mode: PromptMode,
    pub probe: bool,
    pub rows: Vec<MultitaskRow>,
}

impl MultitaskResult {
    pub fn spread(&self, model: &str, task: TargetSelect, gated: bool) -> Option<Spread> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.model == model && r.task == task && r.gated == gated)
            .map(|r| r.srcc)
            .collect();
        Spread::of(&v)
    }

    pub fn runs_table(&self) -> Table {
        let mut t = Table::new(&[
            "manifest_hash",
            "prompt_mode",
            "probe",
            "model",
            "task",
            "gated",
            "seed",
            "srcc",
            "plcc",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.manifest_hash.clone(),
                self.prompt_mode.to_string(),
                self.probe.to_string(),
                r.model.to_string(),
                task_name(r.task).into(),
                r.gated.to_string(),
                r.seed.to_string(),
                fmt_f64(r.srcc),
                fmt_f64(r.plcc),
            ]);
        }
        t
    }

    /// Mean over seeds per (model, task, gated), with the signed difference
    /// from the same-task specialist.
    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&[
            "manifest_hash",
            "prompt_mode",
            "probe",
            "model",
            "task",
            "gated",
            "srcc_mean",
            "srcc_min",
            "srcc_max",
            "n_seeds",
            "delta_vs_specialist",
        ]);
        let mut keys: Vec<(&'static str, TargetSelect, bool)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.model, r.task, r.gated)) {
                keys.push((r.model, r.task, r.gated));
            }
        }
        for (model, task, gated) in keys {
            let runs: Vec<&MultitaskRow> = self
                .rows
                .iter()
                .filter(|r| r.model == model && r.task == task && r.gated == gated)
                .collect();
            let s = Spread::of(&runs.iter().map(|r| r.srcc).collect::<Vec<_>>()).expect("non-empty");
            let specialist = self.spread(specialist_name(task), task, false);
            let mut row = vec![
                combined_hash(runs.iter().map(|r| r.manifest_hash.as_str())),
                self.prompt_mode.to_string(),
                self.probe.to_string(),
                model.to_string(),
                task_name(task).into(),
                gated.to_string(),
            ];
            row.extend(s.cells());
            row.push(opt_cell(specialist.map(|sp| s.mean - sp.mean)));
            t.push(row);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        self.runs_table().write(&dir.join("multitask_runs.csv"))?;
        self.summary_table().write(&dir.join("multitask.csv"))
    }
}

fn specialist_name(task: TargetSelect) -> &'static str {
    match task {
        TargetSelect::Primary => "specialist_primary",
        TargetSelect::Secondary => "specialist_secondary",
    }
}

/// Trains one specialist per target and a unified model on both targets,
/// where a task prefix in the prompt selects the target. Specialists are
/// scored on both tasks; the unified model with and without its prefix.
pub fn prompt_gated_multitask(cfg: &ExperimentConfig) -> Result<MultitaskResult, HarnessError> {
    let base = load_splits(cfg)?;
    if !base.train.header.has_target2 {
        return Err(DataError::NoSecondTarget.into());
    }
    let tasks = [TargetSelect::Primary, TargetSelect::Secondary];
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let transform = prompt_transform(cfg.prompt_mode, cfg.dataset.shuffle_level(), seed);
            let splits = transform_splits(&base, &transform)?;
            let mut rows = Vec::new();
            let tests: Vec<Dataset> = tasks
                .iter()
                .map(|&t| gated(&splits.test, None, t))
                .collect::<Result<_, _>>()?;
            for task in tasks {
                let train = gated(&splits.train, None, task)?;
                let c = ExperimentConfig {
                    dataset: super::DatasetConfig {
                        target: task,
                        ..cfg.dataset.clone()
                    },
                    ..cfg.clone()
                };
                let manifest = run_manifest(&c, seed, &transform, &splits)?.with("model", specialist_name(task));
                let model = fit(&c, seed, &train, TargetSelect::Primary)?;
                for (&eval_task, test) in tasks.iter().zip(&tests) {
                    let (_, report) = evaluate_model(&model, test, TargetSelect::Primary, cfg.min_group_size)?;
                    rows.push(MultitaskRow {
                        model: specialist_name(task),
                        task: eval_task,
                        gated: false,
                        seed,
                        srcc: report.srcc,
                        plcc: report.plcc,
                        manifest_hash: manifest.clone().with("eval_task", task_name(eval_task)).hash(),
                    });
                }
            }
            let gates = [ALIGNMENT_GATE, PERCEPTUAL_GATE];
            let unified_train = gated(&splits.train, Some(gates[0]), tasks[0])?.concat(&gated(
                &splits.train,
                Some(gates[1]),
                tasks[1],
            )?)?;
            let manifest = run_manifest(cfg, seed, &transform, &splits)?.with("model", "unified");
            let unified = fit(cfg, seed, &unified_train, TargetSelect::Primary)?;
            for (i, &task) in tasks.iter().enumerate() {
                for gate in [true, false] {
                    let test = gated(&splits.test, gate.then_some(gates[i]), task)?;
                    let (_, report) = evaluate_model(&unified, &test, TargetSelect::Primary, cfg.min_group_size)?;
                    rows.push(MultitaskRow {
                        model: "unified",
                        task,
                        gated: gate,
                        seed,
                        srcc: report.srcc,
                        plcc: report.plcc,
                        manifest_hash: manifest
                            .clone()
                            .with("eval_task", task_name(task))
                            .with("gated", gate)
                            .hash(),
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(MultitaskResult {
        prompt_mode: cfg.prompt_mode,
        probe: cfg.train.probe,
        rows: per_seed.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParaphraseRow {
    /// `original`, `paraphrase` or `adversarial`.
    pub condition: &'static str,
    pub seed: u64,
    pub srcc: f64,
    pub plcc: f64,
    pub manifest_hash: String,
}

/// Scores `model` on `test` with its own prompts and with `map` applied.
/// Returns the `original` and `paraphrase` rows.
pub fn paraphrase_eval(
    model: &TrainedModel,
    test: &Dataset,
    target: TargetSelect,
    map: &ParaphraseMap,
    min_group_size: usize,
) -> Result<[(f64, f64); 2], HarnessError> {
    let (_, original) = evaluate_model(model, test, target, min_group_size)?;
    let para = apply_paraphrase_map(test, map)?;
    let (_, paraphrased) = evaluate_model(model, &para, target, min_group_size)?;
    Ok([(original.srcc, original.plcc), (paraphrased.srcc, paraphrased.plcc)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParaphraseResult {
    pub prompt_mode: PromptMode,
    pub probe: bool,
    pub rows: Vec<ParaphraseRow>,
}

impl ParaphraseResult {
    pub fn spread(&self, condition: &str) -> Option<Spread> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.condition == condition)
            .map(|r| r.srcc)
            .collect();
        Spread::of(&v)
    }

    pub fn runs_table(&self) -> Table {
        let mut t = Table::new(&[
            "manifest_hash",
            "prompt_mode",
            "probe",
            "condition",
            "seed",
            "srcc",
            "plcc",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.manifest_hash.clone(),
                self.prompt_mode.to_string(),
                self.probe.to_string(),
                r.condition.to_string(),
                r.seed.to_string(),
                fmt_f64(r.srcc),
                fmt_f64(r.plcc),
            ]);
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&[
            "manifest_hash",
            "prompt_mode",
            "probe",
            "condition",
            "srcc_mean",
            "srcc_min",
            "srcc_max",
            "n_seeds",
            "delta_vs_original",
        ]);
        let original = self.spread("original");
        for cond in ["original", "paraphrase", "adversarial"] {
            let runs: Vec<&ParaphraseRow> = self.rows.iter().filter(|r| r.condition == cond).collect();
            let Some(s) = Spread::of(&runs.iter().map(|r| r.srcc).collect::<Vec<_>>()) else {
                continue;
            };
            let mut row = vec![
                combined_hash(runs.iter().map(|r| r.manifest_hash.as_str())),
                self.prompt_mode.to_string(),
                self.probe.to_string(),
                cond.to_string(),
            ];
            row.extend(s.cells());
            row.push(opt_cell(original.map(|o| s.mean - o.mean)));
            t.push(row);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        self.runs_table().write(&dir.join("paraphrase_runs.csv"))?;
        self.summary_table().write(&dir.join("paraphrase.csv"))
    }
}

/// Per seed, trains under `cfg.prompt_mode` and evaluates with original
/// prompts, with `map` (or the descriptor synonym map when `None`), and with
/// an adversarial map sending every prompt to a different one.
pub fn paraphrase_experiment(
    cfg: &ExperimentConfig,
    map: Option<&ParaphraseMap>,
) -> Result<ParaphraseResult, HarnessError> {
    let rows = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = run_single(cfg, seed)?;
            let target = cfg.dataset.target;
            let para_map = match map {
                Some(m) => m.clone(),
                None => synonym_map(&run.test),
            };
            let adversarial = adversarial_map(&run.test, seed)?;
            let [original, paraphrased] =
                paraphrase_eval(&run.model, &run.test, target, &para_map, cfg.min_group_size)?;
            let [_, adv] = paraphrase_eval(&run.model, &run.test, target, &adversarial, cfg.min_group_size)?;
            let hash = |cond: &str, m: Option<&ParaphraseMap>| {
                let mut manifest = run.manifest.clone().with("condition", cond);
                if let Some(m) = m {
                    manifest.push(
                        "map_sha256",
                        sha256_hex(crate::data::paraphrase_map_to_string(m).as_bytes()),
                    );
                }
                manifest.hash()
            };
            let row = |condition, (srcc, plcc): (f64, f64), hash| ParaphraseRow {
                condition,
                seed,
                srcc,
                plcc,
                manifest_hash: hash,
            };
            Ok(vec![
                row("original", original, hash("original", None)),
                row("paraphrase", paraphrased, hash("paraphrase", Some(&para_map))),
                row("adversarial", adv, hash("adversarial", Some(&adversarial))),
            ])
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(ParaphraseResult {
        prompt_mode: cfg.prompt_mode,
        probe: cfg.train.probe,
        rows: rows.into_iter().flatten().collect(),
    })
}

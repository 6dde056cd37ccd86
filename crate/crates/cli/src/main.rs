//! `rvtc`: generate synthetic data, train and evaluate bin-classification
//! regressors, and run the prompt-ablation experiments.
//!
//! Results go to `--out` as CSV files plus manifests; summaries are printed to
//! stdout as CSV. Failures print one JSON line `{"error": kind, "message": ...}`
//! to stderr and exit non-zero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rvtc_core::data::{adversarial_map, save_paraphrase_map, save_records, synonym_map};
use rvtc_core::harness::{
    ablation_ladder, bin_sweep, decompose, eval_saved, load_splits, paraphrase_experiment, prompt_gated_multitask,
    run_single, train_eval_matrix, DatasetKind, Table,
};
use rvtc_core::{ExperimentConfig, HarnessError, PromptMode};

#[derive(Parser, Debug)]
#[command(
    name = "rvtc",
    version,
    about = "Regression via transformer-based bin classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML experiment configuration; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list (`gen`: the dataset seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train only the bin head.
    #[arg(long)]
    probe: bool,
    #[arg(long)]
    prompt_mode: Option<PromptMode>,
    /// Bin count; a comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',')]
    bins: Vec<usize>,
    /// Epoch count; a comma-separated list for `sweep`.
    #[arg(long, value_delimiter = ',')]
    epochs: Vec<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic train/test splits (and paraphrase maps for prompt data).
    Gen(Common),
    /// Train and evaluate one model per seed.
    Train(Common),
    /// Evaluate a saved model on the configured test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Run directory written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Test SRCC across bin counts and epoch budgets.
    Sweep(Common),
    /// Image-only, group-id, shuffled-title and true-title runs.
    Ladder(Common),
    /// Train under some prompt modes, evaluate under others.
    Matrix {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "true_title,image_only")]
        train_modes: Vec<PromptMode>,
        #[arg(long, value_delimiter = ',', default_value = "true_title,image_only,shuffled_title")]
        eval_modes: Vec<PromptMode>,
    },
    /// Specialists versus one prompt-gated model on both targets.
    Multitask(Common),
    /// Per-group comparison of an image-only and a prompt model.
    Decompose(Common),
    /// Original, paraphrased and adversarially re-mapped evaluation prompts.
    Paraphrase {
        #[command(flatten)]
        common: Common,
        /// Paraphrase map file; synonym substitution when absent.
        #[arg(long)]
        map: Option<PathBuf>,
    },
}

fn single(values: &[usize], flag: &str) -> Result<Option<usize>, HarnessError> {
    match values {
        [] => Ok(None),
        [v] => Ok(Some(*v)),
        _ => Err(HarnessError::Config(format!(
            "--{flag} takes one value for this command"
        ))),
    }
}

/// Loads the configuration (or `preset`) and applies the command-line
/// overrides that mean the same thing for every verb.
fn load_config(
    common: &Common,
    preset: fn() -> ExperimentConfig,
    sweep: bool,
) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => preset(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if common.probe {
        cfg.train.probe = true;
    }
    if let Some(mode) = common.prompt_mode {
        cfg.prompt_mode = mode;
    }
    if !sweep {
        if let Some(k) = single(&common.bins, "bins")? {
            cfg.model.k_bins = k;
        }
        if let Some(e) = single(&common.epochs, "epochs")? {
            cfg.train.epochs = e;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(table: &Table) {
    print!("{}", table.to_csv());
}

fn gen(common: &Common) -> Result<(), HarnessError> {
    let mut cfg = load_config(common, ExperimentConfig::ava, false)?;
    if let Some(seed) = common.seed {
        cfg.dataset.seed = seed;
    }
    if cfg.dataset.kind == DatasetKind::Files {
        return Err(HarnessError::Config("gen needs a synthetic dataset kind".into()));
    }
    let splits = load_splits(&cfg)?;
    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::Io(format!("{}: {e}", out.display())))?;
    save_records(&splits.train, &out.join("train.tsv"))?;
    save_records(&splits.test, &out.join("test.tsv"))?;
    let mut written = vec!["train.tsv", "test.tsv"];
    if cfg.dataset.kind == DatasetKind::Agiqa {
        let all = splits.train.concat(&splits.test)?;
        save_paraphrase_map(&synonym_map(&all), &out.join("synonym_map.tsv"))?;
        save_paraphrase_map(
            &adversarial_map(&all, cfg.dataset.seed)?,
            &out.join("adversarial_map.tsv"),
        )?;
        written.extend(["synonym_map.tsv", "adversarial_map.tsv"]);
    }
    let mut t = Table::new(&["file", "records"]);
    for name in written {
        let n = match name {
            "train.tsv" => splits.train.len().to_string(),
            "test.tsv" => splits.test.len().to_string(),
            _ => String::new(),
        };
        t.push(vec![out.join(name).display().to_string(), n]);
    }
    emit(&t);
    Ok(())
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn train(common: &Common) -> Result<(), HarnessError> {
    let cfg = load_config(common, ExperimentConfig::ava, false)?;
    let mut t = Table::new(&["seed", "prompt_mode", "srcc", "plcc", "manifest_hash", "dir"]);
    for &seed in &cfg.seeds {
        let run = run_single(&cfg, seed)?;
        let dir = seed_dir(&cfg.out, seed);
        run.write(&dir)?;
        t.push(vec![
            seed.to_string(),
            run.prompt_mode.to_string(),
            format!("{:.6}", run.report.srcc),
            format!("{:.6}", run.report.plcc),
            run.manifest_hash.clone(),
            dir.display().to_string(),
        ]);
    }
    emit(&t);
    Ok(())
}

fn eval(common: &Common, model: &Path) -> Result<(), HarnessError> {
    let cfg = load_config(common, ExperimentConfig::ava, false)?;
    let seed = cfg.seeds[0];
    let run = eval_saved(&cfg, seed, model)?;
    run.write_eval(&cfg.out)?;
    let mut t = Table::new(&["seed", "prompt_mode", "srcc", "plcc", "manifest_hash"]);
    t.push(vec![
        seed.to_string(),
        run.prompt_mode.to_string(),
        format!("{:.6}", run.report.srcc),
        format!("{:.6}", run.report.plcc),
        run.manifest_hash.clone(),
    ]);
    emit(&t);
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Gen(c) => gen(&c),
        Command::Train(c) => train(&c),
        Command::Eval { common, model } => eval(&common, &model),
        Command::Sweep(c) => {
            let cfg = load_config(&c, ExperimentConfig::ava, true)?;
            let ks = if c.bins.is_empty() {
                vec![5, 11, 21, 51]
            } else {
                c.bins.clone()
            };
            let epochs = if c.epochs.is_empty() {
                vec![cfg.train.epochs]
            } else {
                c.epochs.clone()
            };
            let r = bin_sweep(&cfg, &ks, &epochs, &[cfg.prompt_mode])?;
            r.write(&cfg.out)?;
            emit(&r.summary_table());
            Ok(())
        }
        Command::Ladder(c) => {
            let cfg = load_config(&c, ExperimentConfig::ava, false)?;
            let r = ablation_ladder(&cfg)?;
            r.write(&cfg.out)?;
            emit(&r.summary_table());
            Ok(())
        }
        Command::Matrix {
            common,
            train_modes,
            eval_modes,
        } => {
            let cfg = load_config(&common, ExperimentConfig::agiqa, false)?;
            let r = train_eval_matrix(&cfg, &train_modes, &eval_modes)?;
            r.write(&cfg.out)?;
            emit(&r.summary_table());
            Ok(())
        }
        Command::Multitask(c) => {
            let cfg = load_config(&c, ExperimentConfig::agiqa, false)?;
            let r = prompt_gated_multitask(&cfg)?;
            r.write(&cfg.out)?;
            emit(&r.summary_table());
            Ok(())
        }
        Command::Decompose(c) => {
            let cfg = load_config(&c, ExperimentConfig::decomposition, false)?;
            let r = decompose(&cfg)?;
            r.write(&cfg.out)?;
            emit(&r.summary_table());
            Ok(())
        }
        Command::Paraphrase { common, map } => {
            let cfg = load_config(&common, ExperimentConfig::agiqa, false)?;
            let map = map.map(|p| rvtc_core::data::load_paraphrase_map(&p)).transpose()?;
            let r = paraphrase_experiment(&cfg, map.as_ref())?;
            r.write(&cfg.out)?;
            emit(&r.summary_table());
            Ok(())
        }
    }
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}

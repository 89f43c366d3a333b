//! Command implementations behind the `gpdrf` binary.
//!
//! Each command is a plain function so it can be driven from tests without
//! spawning a process. Outputs go to a directory: `trace.txt`, `model.ckpt`,
//! `metrics.txt` and `uncertainty.txt`.

pub mod check;
pub mod checkpoint;
pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub use check::{run_checks, CheckLine, CheckReport};
pub use checkpoint::Checkpoint;
pub use config::{DataFormat, KernelFamily, RunConfig};

use crate::data::{load_sequences, load_tabular, Dataset, TaskKind};
use crate::error::{Error, Result};
use crate::inference::{select_inducing, train_with_progress, Trace};
use crate::predict::{evaluate, uncertainty_report, Metric, UncertaintyReport};

pub const TRACE_FILE: &str = "trace.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.txt";
pub const UNCERTAINTY_FILE: &str = "uncertainty.txt";

fn load(path: &Path, format: DataFormat, task: TaskKind, label_column: &str, standardize: bool) -> Result<Dataset> {
    match format {
        DataFormat::Tabular => load_tabular(path, label_column, task, standardize),
        DataFormat::Sequences => load_sequences(path),
    }
}

/// Training set named by the config, standardized if requested.
pub fn load_training_set(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg
        .train_data
        .as_ref()
        .ok_or_else(|| Error::Config("train_data is not set (use --data)".into()))?;
    load(path, cfg.format, cfg.task, &cfg.label_column, cfg.standardize && cfg.format == DataFormat::Tabular)
}

/// Load a test set in the checkpoint's format, transformed and labelled the
/// way the training set was.
pub fn load_test_set(ckpt: &Checkpoint, path: &Path) -> Result<Dataset> {
    let mut data = load(path, ckpt.format, ckpt.task, &ckpt.label_column, false)?;
    if let Some(s) = &ckpt.standardizer {
        data.apply_standardizer(s)?;
    }
    if let Some(classes) = &ckpt.classes {
        data.relabel(classes).map_err(|e| {
            Error::Compatibility(format!("test labels do not match the checkpoint's classes ({e})"))
        })?;
    }
    ckpt.model.config.check_inputs(&data.inputs)?;
    Ok(data)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: Trace,
    pub checkpoint_path: PathBuf,
    pub trace_path: PathBuf,
}

/// Fit a model on an already loaded training set; nothing is written.
pub fn fit(cfg: &RunConfig, data: &Dataset, progress: impl FnMut(usize, f64)) -> Result<(Checkpoint, Trace)> {
    cfg.validate()?;
    let model_config = cfg.model_config(data)?;
    model_config.check_inputs(&data.inputs)?;
    let train = cfg.train_config();
    train.validate()?;
    let pseudo = match model_config.kind.has_gp() {
        true => Some(select_inducing(&data.inputs, train.inducing, train.inducing_strategy, &model_config.kernel, train.seed)?),
        false => None,
    };
    let mut model = crate::model::Model::new(model_config, pseudo, train.seed)?;
    let trace = train_with_progress(&mut model, data, &train, progress)?;
    let classes = match &data.targets {
        crate::data::Targets::Class { classes, .. } => Some(classes.clone()),
        crate::data::Targets::Real(_) => None,
    };
    let ckpt = Checkpoint {
        model,
        task: cfg.task,
        format: cfg.format,
        label_column: cfg.label_column.clone(),
        classes,
        standardizer: data.standardizer.clone(),
        train,
        histogram_bins: cfg.histogram_bins,
    };
    Ok((ckpt, trace))
}

/// `train`: fit, then write the trace and checkpoint.
pub fn cmd_train(cfg: &RunConfig, checkpoint_path: Option<&Path>, progress: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_training_set(cfg)?;
    let (checkpoint, trace) = fit(cfg, &data, progress)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let trace_path = cfg.out_dir.join(TRACE_FILE);
    trace.write(&trace_path)?;
    let checkpoint_path = checkpoint_path.map_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE), Path::to_path_buf);
    checkpoint.write(&checkpoint_path)?;
    Ok(TrainOutcome { checkpoint, trace, checkpoint_path, trace_path })
}

/// Posterior sample sizes and seed for evaluation; `None` falls back to the
/// values the checkpoint was trained with.
#[derive(Debug, Clone, Copy, Default)]
pub struct PredictOptions {
    pub samples: Option<usize>,
    pub draws: Option<usize>,
    pub seed: Option<u64>,
}

impl PredictOptions {
    fn resolve(self, ckpt: &Checkpoint) -> Result<(usize, usize, u64)> {
        let s = self.samples.unwrap_or(ckpt.train.samples);
        let t = self.draws.unwrap_or(ckpt.train.draws);
        if s == 0 {
            return Err(Error::Config("samples must be positive".into()));
        }
        if t < 2 {
            return Err(Error::Config(format!("draws must be at least 2, got {t}")));
        }
        Ok((s, t, self.seed.unwrap_or(ckpt.train.seed)))
    }
}

pub fn metrics_text(metric: Metric, n: usize, samples: usize, draws: usize, seed: u64) -> String {
    let mut out = String::new();
    writeln!(out, "metric\t{}", metric.name()).unwrap();
    writeln!(out, "{}\t{:?}", metric.name(), metric.value()).unwrap();
    writeln!(out, "n\t{n}").unwrap();
    writeln!(out, "samples\t{samples}").unwrap();
    writeln!(out, "draws\t{draws}").unwrap();
    writeln!(out, "seed\t{seed}").unwrap();
    out
}

/// `evaluate`: error rate or RMSE on a test set, written to `out/metrics.txt`.
pub fn cmd_evaluate(checkpoint: &Path, data: &Path, opts: PredictOptions, out_dir: &Path) -> Result<(Metric, PathBuf)> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let test = load_test_set(&ckpt, data)?;
    let (s, t, seed) = opts.resolve(&ckpt)?;
    let metric = evaluate(&ckpt.model, &test, s, t, seed)?;
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(METRICS_FILE);
    fs::write(&path, metrics_text(metric, test.len(), s, t, seed))?;
    Ok((metric, path))
}

/// `uncertainty`: per-point certainty margins, written to `out/uncertainty.txt`.
pub fn cmd_uncertainty(checkpoint: &Path, data: &Path, opts: PredictOptions, out_dir: &Path) -> Result<(UncertaintyReport, PathBuf)> {
    let ckpt = Checkpoint::read(checkpoint)?;
    if ckpt.task != TaskKind::Classification {
        return Err(Error::Compatibility("uncertainty reports need a classification checkpoint".into()));
    }
    let test = load_test_set(&ckpt, data)?;
    let (s, t, seed) = opts.resolve(&ckpt)?;
    let report = uncertainty_report(&ckpt.model, &test, s, t, seed, ckpt.histogram_bins)?;
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(UNCERTAINTY_FILE);
    fs::write(&path, report.to_text())?;
    Ok((report, path))
}

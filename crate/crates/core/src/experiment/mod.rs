//! End-to-end runs: data preparation, training, evaluation, comparison
//! reports and slice import/export, driven by an [`ExperimentConfig`].

mod config;

use std::path::{Path, PathBuf};

pub use config::{CompareConfig, DataConfig, ExperimentConfig, OutputConfig, SliceSource, SynthConfig, OUTPUT_DIR_ENV};

use crate::archive::NamedTensorArchive;
use crate::data::{load_csv, prepare, synth_generate, write_csv, PreparedData, RawDataset};
use crate::error::{Error, Result};
use crate::metrics::{emit_report, evaluate, Curves, MetricsReport, ScoredSet};
use crate::models::{Model, ModelConfig, Variant};
use crate::slice::FrozenSlice;
use crate::train::{train_with, write_history, EpochRecord, TrainOutcome};

/// Process exit code for an error: 2 configuration, 3 data or file
/// problems, 4 numeric failure, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::NotFound(_)
        | Error::Io { .. }
        | Error::Parse { .. }
        | Error::Schema(_)
        | Error::Csv(_)
        | Error::Format(_)
        | Error::Manifest(_)
        | Error::Dimension(_)
        | Error::Json(_) => 3,
        Error::Numeric(_) => 4,
        Error::Domain(_) | Error::Contract(_) => 1,
    }
}

/// Reads the CSV named in the config, or generates synthetic data.
pub fn load_data(cfg: &ExperimentConfig) -> Result<RawDataset> {
    match &cfg.data.csv {
        Some(path) => load_csv(path, &cfg.data.schema()),
        None => {
            let s = &cfg.data.synth;
            Ok(synth_generate(s.pos, s.neg, cfg.data.features, cfg.seed, s.separation))
        }
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    prepare(&load_data(cfg)?, cfg.data.cutoff, cfg.seed)
}

/// Builds an untrained model, using the configured slice archive for the
/// internal-world variant when one is set.
pub fn build_model(cfg: &ExperimentConfig, variant: Variant) -> Result<Model<f32>> {
    let mc = cfg.model_config(variant);
    match (&cfg.slice.archive, variant) {
        (Some(path), Variant::InternalWorld) => {
            let slice = FrozenSlice::load(&NamedTensorArchive::read(path)?, &mc.slice)?;
            Model::with_slice(&mc, slice)
        }
        _ => Model::new(&mc),
    }
}

/// Validation report for a trained model, with ROC and PR curves.
pub fn evaluate_model(model: &Model<f32>, data: &PreparedData, batch: usize) -> Result<(MetricsReport, Curves)> {
    let probs = model.predict(&data.validation.tensor::<f32>()?, batch)?;
    let set = ScoredSet::new(probs.iter().map(|&p| p as f64).collect(), data.validation.labels.clone())?;
    let eval = evaluate(&set)?;
    let audit = model.audit();
    let name = model.variant().tag();
    Ok((MetricsReport::new(name, &eval, audit.trainable, audit.frozen), Curves::from_scores(name, &set)?))
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub report: MetricsReport,
    pub curves: Curves,
    pub outcome: TrainOutcome,
    pub dir: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains one variant on prepared splits and writes its checkpoint,
/// train-state sidecar, history CSV and report JSON into `dir`.
pub fn train_variant(
    cfg: &ExperimentConfig,
    variant: Variant,
    data: &PreparedData,
    dir: &Path,
    on_epoch: &mut dyn FnMut(Variant, &EpochRecord),
) -> Result<TrainRun> {
    create_dir(dir)?;
    let mut model = build_model(cfg, variant)?;
    let tc = cfg.train_config();
    let mut outcome = train_with(&mut model, &data.train, &data.validation, &tc, |r| on_epoch(variant, r))?;
    let checkpoint = dir.join("model.nta");
    model.save(&checkpoint)?;
    outcome.state.best_checkpoint = Some(checkpoint.display().to_string());
    outcome.state.write(&dir.join("train_state.json"))?;
    write_history(&outcome.history, &dir.join("history.csv"))?;

    let (mut report, curves) = evaluate_model(&model, data, tc.eval_batch)?;
    report.train_time_s = outcome.train_time_s;
    report.epochs_trained = outcome.epochs_run();
    report.best_epoch = outcome.best_epoch();
    write_json(&dir.join("report.json"), &report)?;
    Ok(TrainRun { report, curves, outcome, dir: dir.to_path_buf() })
}

/// Full single-model pipeline for `cfg.model.variant`.
pub fn run_train(cfg: &ExperimentConfig, on_epoch: &mut dyn FnMut(Variant, &EpochRecord)) -> Result<TrainRun> {
    let data = prepare_data(cfg)?;
    let dir = cfg.output.dir.join(cfg.model.variant.tag());
    create_dir(&dir)?;
    write_json(&dir.join("config.json"), &cfg.to_flat())?;
    data.write_manifest(&dir.join("split_manifest.json"))?;
    train_variant(cfg, cfg.model.variant, &data, &dir, on_epoch)
}

/// Re-evaluates a saved checkpoint on the configured validation split.
pub fn run_evaluate(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<MetricsReport> {
    let model = Model::<f32>::load(checkpoint)?;
    let data = prepare_data(cfg)?;
    if data.validation.dim != model.config().input_dim {
        return Err(Error::dim(format!(
            "checkpoint expects {} features, data has {}",
            model.config().input_dim,
            data.validation.dim
        )));
    }
    let (report, _) = evaluate_model(&model, &data, cfg.train.eval_batch)?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct CompareRun {
    pub reports: Vec<MetricsReport>,
    pub files: Vec<PathBuf>,
    pub dir: PathBuf,
}

/// Trains every variant in `cfg.compare.variants` on the same splits and
/// seed, then writes the comparison table, curves and efficiency data.
pub fn run_compare(cfg: &ExperimentConfig, on_epoch: &mut dyn FnMut(Variant, &EpochRecord)) -> Result<CompareRun> {
    let data = prepare_data(cfg)?;
    let dir = cfg.output.dir.join("compare");
    create_dir(&dir)?;
    write_json(&dir.join("config.json"), &cfg.to_flat())?;
    data.write_manifest(&dir.join("split_manifest.json"))?;
    let mut reports = Vec::new();
    let mut curves = Vec::new();
    for &v in &cfg.compare.variants {
        let run = train_variant(cfg, v, &data, &dir.join(v.tag()), on_epoch)
            .map_err(|e| annotate(e, &format!("variant {v}")))?;
        reports.push(run.report);
        curves.push(run.curves);
    }
    let files = emit_report(&dir, &reports, &curves)?;
    Ok(CompareRun { reports, files, dir })
}

/// Prefixes the message of an error with `context`, keeping its kind.
fn annotate(err: Error, context: &str) -> Error {
    match err {
        Error::Dimension(m) => Error::Dimension(format!("{context}: {m}")),
        Error::Domain(m) => Error::Domain(format!("{context}: {m}")),
        Error::Contract(m) => Error::Contract(format!("{context}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("{context}: {m}")),
        Error::Config(v) => Error::Config(v.into_iter().map(|m| format!("{context}: {m}")).collect()),
        other => other,
    }
}

/// Writes the configured synthetic dataset as CSV.
pub fn run_synth(cfg: &ExperimentConfig, out: &Path) -> Result<RawDataset> {
    let s = &cfg.data.synth;
    let ds = synth_generate(s.pos, s.neg, cfg.data.features, cfg.seed, s.separation);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_csv(&ds, out)?;
    Ok(ds)
}

/// Exports the slice of an internal-world checkpoint, or the seeded slice
/// for the configured shape when no checkpoint is given.
pub fn run_export_slice(cfg: &ExperimentConfig, checkpoint: Option<&Path>, out: &Path) -> Result<NamedTensorArchive> {
    let archive = match checkpoint {
        Some(path) => {
            let model = Model::<f32>::load(path)?;
            let slice = model.slice().ok_or_else(|| {
                Error::contract(format!("checkpoint holds a {} model without a slice", model.variant()))
            })?;
            slice.export()?
        }
        None => FrozenSlice::<f32>::random(&cfg.model.slice, cfg.seed)?.export()?,
    };
    archive.validate()?;
    archive.write(out)?;
    Ok(archive)
}

/// Loads a slice archive against the configured shape. With a checkpoint,
/// the checkpoint's slice is replaced and the model saved to `out`;
/// otherwise the validated slice is written to `out`.
pub fn run_import_slice(
    cfg: &ExperimentConfig,
    archive_path: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<FrozenSlice<f32>> {
    let archive = NamedTensorArchive::read(archive_path)?;
    match checkpoint {
        Some(path) => {
            let model = Model::<f32>::load(path)?;
            let config: ModelConfig = model.config().clone();
            let slice = FrozenSlice::load(&archive, &config.slice)?;
            let mut rebuilt = Model::with_slice(&config, slice.clone())?;
            for (id, p) in model.store().iter() {
                rebuilt.store_mut().set_values(id, p.values())?;
            }
            rebuilt.save(out)?;
            Ok(slice)
        }
        None => {
            let slice = FrozenSlice::load(&archive, &cfg.model.slice)?;
            slice.export()?.write(out)?;
            Ok(slice)
        }
    }
}

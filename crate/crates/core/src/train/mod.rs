//! Training engine: losses, AdamW groups, one-cycle schedules, gradient
//! accumulation, clipping and early stopping.

mod loss;
mod optim;
mod schedule;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{loss, LossConfig, LossKind, P_CLAMP};
pub use optim::{check_group_coverage, clip_global_norm, AdamW, AdamWConfig};
pub use schedule::{onecycle_lr, EarlyStopping, OneCycle, StopDecision, FLOOR_FRAC, WARMUP_FRAC};

use crate::autodiff::Graph;
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, ScoredSet};
use crate::models::Model;
use crate::nn::Phase;
use crate::param::ParamId;
use crate::tensor::{Real, Tensor};

/// RNG stream used for shuffling and dropout, distinct from the data streams.
pub const TRAIN_RNG_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub micro_batch: usize,
    pub accumulation: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub clip_norm: f64,
    pub eval_batch: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub projection: AdamWConfig,
    pub classifier: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 300,
            micro_batch: 32,
            accumulation: 4,
            patience: 10,
            min_delta: 0.001,
            clip_norm: 1.0,
            eval_batch: 256,
            seed: 42,
            loss: LossConfig::default(),
            projection: AdamWConfig::projection(),
            classifier: AdamWConfig::classifier(),
        }
    }
}

impl TrainConfig {
    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.accumulation
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("max_epochs", self.max_epochs),
            ("micro_batch", self.micro_batch),
            ("accumulation", self.accumulation),
            ("patience", self.patience),
            ("eval_batch", self.eval_batch),
        ] {
            if v == 0 {
                bad.push(format!("{name} must be at least 1"));
            }
        }
        if !(self.min_delta >= 0.0) {
            bad.push("min_delta must be non-negative".into());
        }
        if !(self.clip_norm > 0.0) {
            bad.push("clip_norm must be positive".into());
        }
        bad.extend(self.loss.validate());
        bad.extend(self.projection.validate("projection"));
        bad.extend(self.classifier.validate("classifier"));
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.effective_batch())
    }
}

/// Zeroes the model gradients, then accumulates the gradient of the
/// effective batch formed by `micro` batches. Each micro-batch loss is
/// weighted by its share of the effective batch, so the result equals the
/// gradient of the mean loss over all rows. Running statistics from
/// training-mode forwards are applied after each micro-batch. Returns the
/// effective-batch loss.
pub fn accumulate_gradients<T: Real>(
    model: &mut Model<T>,
    micro: &[(Tensor<T>, Vec<u8>)],
    loss_cfg: &LossConfig,
    phase: &mut Phase,
) -> Result<f64> {
    let total: usize = micro.iter().map(|(_, y)| y.len()).sum();
    if total == 0 {
        return Err(Error::contract("gradient accumulation over an empty batch"));
    }
    model.store_mut().zero_grad();
    let mut value = 0.0;
    for (x, y) in micro {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let p = model.forward(&mut g, xv, phase)?;
        let l = loss(&mut g, p, y, loss_cfg)?;
        let share = y.len() as f64 / total as f64;
        let scaled = g.scale(l, T::lit(share));
        value += g.value(l)[0].as_f64() * share;
        g.backward(scaled, model.store_mut())?;
        let updates = g.take_buffer_updates();
        model.store_mut().apply_buffer_updates(updates)?;
    }
    Ok(value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr_projection: f64,
    pub lr_classifier: f64,
    pub train_loss: f64,
    pub grad_norm: f64,
    pub val_auc: f64,
    pub val_f1: f64,
    pub val_threshold: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    fn of(rng: &ChaCha8Rng, seed: u64) -> Self {
        RngState { seed, stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Position of the training loop, written next to checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    pub total_steps: usize,
    pub best_f1: f64,
    pub best_epoch: usize,
    pub epochs_since_improve: usize,
    pub best_checkpoint: Option<String>,
    pub rng: RngState,
}

impl TrainState {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub state: TrainState,
    /// Seconds spent inside the epoch loop.
    pub train_time_s: f64,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn best_epoch(&self) -> usize {
        self.state.best_epoch
    }

    pub fn best_f1(&self) -> f64 {
        self.state.best_f1
    }

    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }
}

/// Writes the history as CSV. Contains no timings, so identical runs give
/// identical bytes.
pub fn write_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{other:?}")),
    })?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Validation F1 at the F1-optimal threshold, plus AUC and that threshold.
pub fn validation_scores<T: Real>(model: &Model<T>, val: &DatasetSplit, batch: usize) -> Result<(f64, f64, f64)> {
    let probs = model.predict(&val.tensor::<T>()?, batch)?;
    let set = ScoredSet::new(probs.iter().map(|p| p.as_f64()).collect(), val.labels.clone())?;
    let e = evaluate(&set)?;
    Ok((e.confusion.f1(), e.auc, e.threshold))
}

struct Group<T: Real> {
    opt: AdamW<T>,
    schedule: OneCycle,
}

/// Splits trainable parameters into the projection and classifier groups.
pub fn optimizer_groups<T: Real>(model: &Model<T>) -> (Vec<ParamId>, Vec<ParamId>) {
    model.store().trainable_ids().into_iter().partition(|&id| !Model::<T>::is_classifier(&model.store().get(id).name))
}

/// Trains `model` in place and leaves it holding the best-validation-F1
/// weights.
pub fn train<T: Real>(
    model: &mut Model<T>,
    train_split: &DatasetSplit,
    val: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, train_split, val, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with<T: Real>(
    model: &mut Model<T>,
    train_split: &DatasetSplit,
    val: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_split.is_empty() || val.is_empty() {
        return Err(Error::contract("training needs non-empty train and validation splits"));
    }
    let d = model.config().input_dim;
    if train_split.dim != d || val.dim != d {
        return Err(Error::dim(format!("model expects {d} features, splits have {} and {}", train_split.dim, val.dim)));
    }

    let (proj_ids, cls_ids) = optimizer_groups(model);
    check_group_coverage(model.store(), &[&proj_ids, &cls_ids])?;
    let all_ids: Vec<ParamId> = proj_ids.iter().chain(&cls_ids).copied().collect();
    let steps_per_epoch = cfg.steps_per_epoch(train_split.len());
    let total_steps = cfg.max_epochs * steps_per_epoch;
    let mut groups: Vec<Group<T>> =
        [("projection", &cfg.projection, proj_ids), ("classifier", &cfg.classifier, cls_ids)]
            .into_iter()
            .map(|(name, oc, ids)| Group {
                opt: AdamW::new(name, oc.clone(), ids, model.store()),
                schedule: OneCycle::new(oc.lr, total_steps),
            })
            .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_RNG_STREAM);
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best: Option<Vec<Arc<Vec<T>>>> = None;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_split.len()).collect();
    let mut step = 0usize;
    let mut stopped_early = false;

    let started = Instant::now();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut norm_sum, mut lrs) = (0.0, 0.0, [0.0; 2]);
        for chunk in order.chunks(cfg.effective_batch()) {
            let mut micro = Vec::with_capacity(cfg.accumulation);
            for idx in chunk.chunks(cfg.micro_batch) {
                micro.push((train_split.batch::<T>(idx)?, idx.iter().map(|&i| train_split.labels[i]).collect()));
            }
            let l = accumulate_gradients(model, &micro, &cfg.loss, &mut Phase::Train(&mut rng))?;
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at optimizer step {step}")));
            }
            norm_sum += clip_global_norm(model.store_mut(), &all_ids, cfg.clip_norm);
            for (k, grp) in groups.iter_mut().enumerate() {
                let lr = grp.schedule.lr(step)?;
                grp.opt.step(model.store_mut(), lr)?;
                lrs[k] = lr;
            }
            loss_sum += l * chunk.len() as f64;
            step += 1;
        }
        model.store_mut().zero_grad();

        let (f1, auc, threshold) = validation_scores(model, val, cfg.eval_batch)?;
        let decision = stopper.observe(epoch, f1);
        if decision == StopDecision::Improved {
            best = Some(model.store().snapshot());
        }
        let record = EpochRecord {
            epoch,
            step,
            lr_projection: lrs[0],
            lr_classifier: lrs[1],
            train_loss: loss_sum / train_split.len() as f64,
            grad_norm: norm_sum / steps_per_epoch as f64,
            val_auc: auc,
            val_f1: f1,
            val_threshold: threshold,
            improved: decision == StopDecision::Improved,
        };
        on_epoch(&record);
        history.push(record);
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    let train_time_s = started.elapsed().as_secs_f64();

    if let Some(snap) = &best {
        model.store_mut().restore(snap)?;
    }
    let state = TrainState {
        epoch: history.len(),
        step,
        total_steps,
        best_f1: stopper.best.max(0.0),
        best_epoch: stopper.best_epoch,
        epochs_since_improve: stopper.since_improvement,
        best_checkpoint: None,
        rng: RngState::of(&rng, cfg.seed),
    };
    Ok(TrainOutcome { history, state, train_time_s, stopped_early })
}

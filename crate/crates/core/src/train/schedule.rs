use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WARMUP_FRAC: f64 = 0.35;
pub const FLOOR_FRAC: f64 = 0.05;

/// Linear ramp from `floor_frac * base` to `base` over the first
/// `warmup_frac` of the steps, then cosine decay back to the floor at the
/// last step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub floor_frac: f64,
}

impl OneCycle {
    pub fn new(base_lr: f64, total_steps: usize) -> Self {
        OneCycle { base_lr, total_steps, warmup_frac: WARMUP_FRAC, floor_frac: FLOOR_FRAC }
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        let t = self.total_steps;
        if t == 0 {
            return Err(Error::contract("one-cycle schedule needs at least one step"));
        }
        if step >= t {
            return Err(Error::contract(format!("step {step} outside schedule of {t} steps")));
        }
        let floor = self.floor_frac * self.base_lr;
        let warm_end = self.warmup_frac * t as f64;
        let s = step as f64;
        if s < warm_end {
            return Ok(floor + (self.base_lr - floor) * s / warm_end);
        }
        let span = (t - 1) as f64 - warm_end;
        let progress = if span > 0.0 { ((s - warm_end) / span).min(1.0) } else { 1.0 };
        Ok(floor + (self.base_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

pub fn onecycle_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    OneCycle::new(base_lr, total_steps).lr(step)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Waiting,
    Stop,
}

/// Patience-based early stopping on a score that should increase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub best_epoch: usize,
    pub since_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping { patience, min_delta, best: f64::NEG_INFINITY, best_epoch: 0, since_improvement: 0 }
    }

    /// Records the score of `epoch` (1-based). An improvement must exceed
    /// the best so far by more than `min_delta`.
    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        if score > self.best + self.min_delta || (self.best == f64::NEG_INFINITY && score.is_finite()) {
            self.best = score;
            self.best_epoch = epoch;
            self.since_improvement = 0;
            StopDecision::Improved
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Waiting
            }
        }
    }
}

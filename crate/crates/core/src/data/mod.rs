//! Table ingestion, temporal split, class balancing and standardization.

mod io;
mod synth;

use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_csv, read_csv, write_csv, write_csv_to, Schema, DATE_FORMAT};
pub use synth::{feature_names, synth_generate};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Rows in file order with features stored row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawDataset {
    pub feature_names: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub labels: Vec<u8>,
    pub features: Vec<f64>,
    /// Zero-based data-row index of each row in the source file.
    pub source_rows: Vec<usize>,
}

impl RawDataset {
    pub fn empty(feature_names: Vec<String>) -> Self {
        RawDataset { feature_names, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.dim();
        &self.features[r * d..(r + 1) * d]
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        (pos, self.len() - pos)
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> RawDataset {
        let mut out = RawDataset::empty(self.feature_names.clone());
        out.features.reserve(idx.len() * self.dim());
        for &i in idx {
            out.features.extend_from_slice(self.row(i));
            out.dates.push(self.dates[i]);
            out.labels.push(self.labels[i]);
            out.source_rows.push(self.source_rows[i]);
        }
        out
    }
}

pub fn default_cutoff() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 1).expect("valid date")
}

#[derive(Clone, Debug)]
pub struct TemporalSplit {
    pub train: RawDataset,
    pub validation: RawDataset,
    pub warnings: Vec<String>,
}

/// Rows dated before `cutoff` train; rows on or after it validate.
pub fn temporal_split(ds: &RawDataset, cutoff: NaiveDate) -> TemporalSplit {
    let (early, late): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| ds.dates[i] < cutoff);
    let mut warnings = Vec::new();
    if early.is_empty() {
        warnings.push(format!("no rows dated before {cutoff}: training split is empty"));
    }
    if late.is_empty() {
        warnings.push(format!("no rows dated on or after {cutoff}: validation split is empty"));
    }
    TemporalSplit { train: ds.select(&early), validation: ds.select(&late), warnings }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceRecord {
    pub positives_in: usize,
    pub negatives_in: usize,
    pub kept_per_class: usize,
    pub dropped: usize,
}

/// Randomly subsamples the majority class down to the minority count and
/// shuffles the result. Deterministic in `seed`.
pub fn balance_undersample(ds: &RawDataset, seed: u64) -> Result<(RawDataset, BalanceRecord)> {
    balance_with(ds, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn balance_with(ds: &RawDataset, rng: &mut ChaCha8Rng) -> Result<(RawDataset, BalanceRecord)> {
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| ds.labels[i] == 1);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::contract(format!(
            "balancing needs both classes, got {} positive and {} negative rows",
            pos.len(),
            neg.len()
        )));
    }
    let record = BalanceRecord {
        positives_in: pos.len(),
        negatives_in: neg.len(),
        kept_per_class: pos.len().min(neg.len()),
        dropped: pos.len().abs_diff(neg.len()),
    };
    let major = if pos.len() > neg.len() { &mut pos } else { &mut neg };
    major.shuffle(rng);
    major.truncate(record.kept_per_class);
    major.sort_unstable();
    let mut keep: Vec<usize> = pos.into_iter().chain(neg).collect();
    keep.shuffle(rng);
    Ok((ds.select(&keep), record))
}

/// Per-column mean and sample standard deviation; zero deviations are
/// replaced by 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &RawDataset) -> Result<Self> {
        let (n, d) = (ds.len(), ds.dim());
        if n == 0 {
            return Err(Error::contract("cannot standardize with an empty training split"));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(ds.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut ss = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in ss.iter_mut().zip(ds.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = ss
            .into_iter()
            .map(|s| {
                let sd = if n > 1 { (s / (n - 1) as f64).sqrt() } else { 0.0 };
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, ds: &RawDataset) -> Vec<f64> {
        let d = ds.dim();
        ds.features.iter().enumerate().map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub tag: SplitTag,
    pub dim: usize,
    /// Standardized features, row-major `[N, dim]`.
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
    pub dates: Vec<NaiveDate>,
    pub source_rows: Vec<usize>,
    pub stats: Standardizer,
    pub balance: Option<BalanceRecord>,
    pub seed: Option<u64>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.features[r * self.dim..(r + 1) * self.dim]
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        (pos, self.len() - pos)
    }

    /// Features of the rows at `idx` as a `[idx.len(), dim]` tensor.
    pub fn batch<T: Real>(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend(self.row(i).iter().map(|&v| T::lit(v)));
        }
        Tensor::new([idx.len(), self.dim], data)
    }

    pub fn tensor<T: Real>(&self) -> Result<Tensor<T>> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// Z-scores both splits with statistics fitted on `train` alone.
pub fn standardize(train: &RawDataset, val: &RawDataset) -> Result<(DatasetSplit, DatasetSplit)> {
    let stats = Standardizer::fit(train)?;
    let make = |ds: &RawDataset, tag| DatasetSplit {
        tag,
        dim: ds.dim(),
        features: stats.apply(ds),
        labels: ds.labels.clone(),
        dates: ds.dates.clone(),
        source_rows: ds.source_rows.clone(),
        stats: stats.clone(),
        balance: None,
        seed: None,
    };
    Ok((make(train, SplitTag::Train), make(val, SplitTag::Validation)))
}

#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: DatasetSplit,
    pub validation: DatasetSplit,
    pub warnings: Vec<String>,
    pub cutoff: NaiveDate,
    pub seed: u64,
    pub feature_names: Vec<String>,
}

/// Temporal split, per-split undersampling (train on RNG stream 0,
/// validation on stream 1 of `seed`), then train-only standardization.
pub fn prepare(ds: &RawDataset, cutoff: NaiveDate, seed: u64) -> Result<PreparedData> {
    let split = temporal_split(ds, cutoff);
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::contract(split.warnings.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, tb) = balance_with(&split.train, &mut rng)?;
    rng.set_stream(1);
    rng.set_word_pos(0);
    let (val, vb) = balance_with(&split.validation, &mut rng)?;
    let (mut train_s, mut val_s) = standardize(&train, &val)?;
    train_s.balance = Some(tb);
    train_s.seed = Some(seed);
    val_s.balance = Some(vb);
    val_s.seed = Some(seed);
    Ok(PreparedData {
        train: train_s,
        validation: val_s,
        warnings: split.warnings,
        cutoff,
        seed,
        feature_names: ds.feature_names.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub rows: Vec<usize>,
    pub balance: Option<BalanceRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub cutoff: String,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub train: SplitRecord,
    pub validation: SplitRecord,
    pub stats: Standardizer,
    pub warnings: Vec<String>,
}

impl PreparedData {
    pub fn manifest(&self) -> SplitManifest {
        let rec = |s: &DatasetSplit| SplitRecord { rows: s.source_rows.clone(), balance: s.balance.clone() };
        SplitManifest {
            cutoff: self.cutoff.format(DATE_FORMAT).to_string(),
            seed: self.seed,
            feature_names: self.feature_names.clone(),
            train: rec(&self.train),
            validation: rec(&self.validation),
            stats: self.train.stats.clone(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Stacks `window` consecutive day vectors: output row `t` (for
/// `t = window-1 .. days-1`) is `[x_{t-window+1}; ...; x_t]`, flattened to
/// `window * d` values.
pub fn assemble_windows(days: &[f64], d: usize, window: usize) -> Result<Vec<f64>> {
    if d == 0 || window == 0 || !days.len().is_multiple_of(d) {
        return Err(Error::dim(format!("{} values do not form rows of width {d}", days.len())));
    }
    let n = days.len() / d;
    if n < window {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity((n - window + 1) * window * d);
    for t in window - 1..n {
        out.extend_from_slice(&days[(t + 1 - window) * d..(t + 1) * d]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;

//! Threshold metrics, ROC/PR analysis and comparison reports.

mod report;

pub use report::{emit_report, write_svg_plot, Curves, MetricsReport, REPORT_VERSION, TABLE_COLUMNS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores in `[0, 1]` with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::dim(format!("{} scores for {} labels", scores.len(), labels.len())));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Domain(format!("score {s} outside [0, 1]")));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Domain("labels must be 0 or 1".into()));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn class_counts(&self) -> (usize, usize) {
        let p = self.labels.iter().filter(|&&y| y == 1).count();
        (p, self.len() - p)
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (p, n) = self.class_counts();
        if p == 0 || n == 0 {
            return Err(Error::contract(format!("need both classes, got {p} positive and {n} negative")));
        }
        Ok((p, n))
    }

    /// `(score, positives, negatives)` per distinct score, highest first.
    fn tie_groups(&self) -> Vec<(f64, usize, usize)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut groups: Vec<(f64, usize, usize)> = Vec::new();
        for i in idx {
            let s = self.scores[i];
            match groups.last_mut() {
                Some(g) if g.0 == s => {}
                _ => groups.push((s, 0, 0)),
            }
            let g = groups.last_mut().unwrap();
            if self.labels[i] == 1 {
                g.1 += 1;
            } else {
                g.2 += 1;
            }
        }
        groups
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2tp / (2tp + fp + fn)`, which equals the harmonic mean of precision
    /// and recall; 0 when there are no positives either way.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

/// Counts under the rule `score >= threshold` predicts positive.
pub fn confusion(set: &ScoredSet, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &y) in set.scores.iter().zip(&set.labels) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per distinct score.
pub fn roc_curve(set: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    let (p, n) = set.require_both_classes()?;
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0, 0);
    for (_, gp, gn) in set.tie_groups() {
        tp += gp;
        fp += gn;
        pts.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    Ok(pts)
}

/// Area under the ROC polyline. Tied scores form one diagonal segment, so
/// the result equals the Mann-Whitney statistic with ties counted half.
pub fn roc_auc(set: &ScoredSet) -> Result<f64> {
    let pts = roc_curve(set)?;
    Ok(pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum())
}

/// Precision-recall points `(recall, precision)`, one per distinct score,
/// highest threshold first.
pub fn pr_curve(set: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    let (p, _) = set.require_both_classes()?;
    let (mut tp, mut fp) = (0, 0);
    Ok(set
        .tie_groups()
        .into_iter()
        .map(|(_, gp, gn)| {
            tp += gp;
            fp += gn;
            (ratio(tp, p), ratio(tp, tp + fp))
        })
        .collect())
}

/// Sorted distinct scores plus the midpoints between neighbours.
pub fn threshold_candidates(set: &ScoredSet) -> Vec<f64> {
    let mut u: Vec<f64> = set.scores.clone();
    u.sort_by(f64::total_cmp);
    u.dedup();
    let mut out = Vec::with_capacity(2 * u.len());
    for (i, &s) in u.iter().enumerate() {
        if i > 0 {
            out.push(u[i - 1] + (s - u[i - 1]) / 2.0);
        }
        out.push(s);
    }
    out
}

/// Threshold maximizing F1 over [`threshold_candidates`]; ties go to the
/// lowest threshold. Returns `(threshold, f1)`.
pub fn optimal_threshold(set: &ScoredSet) -> Result<(f64, f64)> {
    let (p, _) = set.require_both_classes()?;
    let mut sorted: Vec<(f64, u8)> = set.scores.iter().copied().zip(set.labels.iter().copied()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Walk thresholds upward; `below` rows (sorted prefix) are predicted negative.
    let (mut below, mut fn_) = (0, 0);
    let mut best = (f64::NAN, -1.0);
    for t in threshold_candidates(set) {
        while below < sorted.len() && sorted[below].0 < t {
            fn_ += sorted[below].1 as usize;
            below += 1;
        }
        let tp = p - fn_;
        let fp = (sorted.len() - below) - tp;
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(best)
}

/// Full evaluation at the F1-optimal threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub auc: f64,
    pub threshold: f64,
    pub confusion: Confusion,
}

pub fn evaluate(set: &ScoredSet) -> Result<Evaluation> {
    let auc = roc_auc(set)?;
    let (threshold, _) = optimal_threshold(set)?;
    Ok(Evaluation { auc, threshold, confusion: confusion(set, threshold) })
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{pr_curve, roc_curve, Confusion, Evaluation, ScoredSet};
use crate::error::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// Comparison-table columns in output order.
pub const TABLE_COLUMNS: [&str; 18] = [
    "model",
    "accuracy",
    "auc",
    "precision",
    "recall",
    "f1",
    "threshold",
    "train_time_s",
    "params",
    "trainable_params",
    "frozen_params",
    "tp",
    "fp",
    "tn",
    "fn",
    "epochs_trained",
    "best_epoch",
    "report_version",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub report_version: u32,
    pub model: String,
    pub accuracy: f64,
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Chosen to maximize F1 on the scored set itself, so the threshold
    /// metrics are optimistic.
    pub threshold: f64,
    pub train_time_s: f64,
    pub trainable_params: usize,
    pub frozen_params: usize,
    pub confusion: Confusion,
    pub epochs_trained: usize,
    pub best_epoch: usize,
}

impl MetricsReport {
    pub fn new(model: impl Into<String>, eval: &Evaluation, trainable_params: usize, frozen_params: usize) -> Self {
        let c = eval.confusion;
        MetricsReport {
            report_version: REPORT_VERSION,
            model: model.into(),
            accuracy: c.accuracy(),
            auc: eval.auc,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            threshold: eval.threshold,
            train_time_s: 0.0,
            trainable_params,
            frozen_params,
            confusion: c,
            epochs_trained: 0,
            best_epoch: 0,
        }
    }

    pub fn params(&self) -> usize {
        self.trainable_params + self.frozen_params
    }

    pub fn csv_row(&self) -> Vec<String> {
        let c = &self.confusion;
        vec![
            self.model.clone(),
            self.accuracy.to_string(),
            self.auc.to_string(),
            self.precision.to_string(),
            self.recall.to_string(),
            self.f1.to_string(),
            self.threshold.to_string(),
            format!("{:.3}", self.train_time_s),
            self.params().to_string(),
            self.trainable_params.to_string(),
            self.frozen_params.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            self.epochs_trained.to_string(),
            self.best_epoch.to_string(),
            self.report_version.to_string(),
        ]
    }

    /// One line in the layout of the comparison table, for terminals.
    pub fn table_line(&self) -> String {
        format!(
            "{:<16} acc {:.4}  auc {:.4}  prec {:.4}  rec {:.4}  f1 {:.4}  thr {:.4}  time {:.1}s  params {}",
            self.model,
            self.accuracy,
            self.auc,
            self.precision,
            self.recall,
            self.f1,
            self.threshold,
            self.train_time_s,
            self.params()
        )
    }
}

/// ROC and precision-recall polylines of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Curves {
    pub model: String,
    pub roc: Vec<(f64, f64)>,
    pub pr: Vec<(f64, f64)>,
}

impl Curves {
    pub fn from_scores(model: impl Into<String>, set: &ScoredSet) -> Result<Self> {
        Ok(Curves { model: model.into(), roc: roc_curve(set)?, pr: pr_curve(set)? })
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Writes `comparison.csv`, `comparison.json` and `efficiency.csv`, plus
/// `roc.csv`, `pr.csv`, `roc.svg` and `pr.svg` when curves are given.
/// Returns the written paths.
pub fn emit_report(dir: &Path, reports: &[MetricsReport], curves: &[Curves]) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::contract("no reports to emit"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        write(&p, &text)?;
        written.push(p);
        Ok(())
    };

    put("comparison.csv", csv_text(&TABLE_COLUMNS, reports.iter().map(MetricsReport::csv_row))?)?;
    put("comparison.json", serde_json::to_string_pretty(reports)? + "\n")?;
    put(
        "efficiency.csv",
        csv_text(
            &["model", "params", "trainable_params", "frozen_params", "train_time_s"],
            reports.iter().map(|r| {
                vec![
                    r.model.clone(),
                    r.params().to_string(),
                    r.trainable_params.to_string(),
                    r.frozen_params.to_string(),
                    format!("{:.3}", r.train_time_s),
                ]
            }),
        )?,
    )?;
    if !curves.is_empty() {
        let points = |pick: fn(&Curves) -> &Vec<(f64, f64)>| {
            curves
                .iter()
                .flat_map(move |c| {
                    pick(c).iter().map(move |&(x, y)| vec![c.model.clone(), x.to_string(), y.to_string()])
                })
                .collect::<Vec<_>>()
        };
        put("roc.csv", csv_text(&["model", "fpr", "tpr"], points(|c| &c.roc))?)?;
        put("pr.csv", csv_text(&["model", "recall", "precision"], points(|c| &c.pr))?)?;
        let series = |pick: fn(&Curves) -> &Vec<(f64, f64)>| {
            curves.iter().map(|c| (c.model.as_str(), pick(c).as_slice())).collect::<Vec<_>>()
        };
        put("roc.svg", write_svg_plot("ROC", "false positive rate", "true positive rate", &series(|c| &c.roc)))?;
        put("pr.svg", write_svg_plot("Precision-recall", "recall", "precision", &series(|c| &c.pr)))?;
    }
    Ok(written)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Unit-square line plot with one polyline per series.
pub fn write_svg_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, &[(f64, f64)])]) -> String {
    let (left, top, size) = (60.0, 40.0, 400.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="640" height="500" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" font-size="16">{}</text>"#, left, esc(title));
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{size}" height="{size}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (x, y) = (left + f * size, top + size - f * size);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{f:.2}</text>"#, top + size + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{f:.2}</text>"#, left - 6.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        left + size / 2.0,
        top + size + 36.0,
        esc(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + size / 2.0,
        top + size / 2.0,
        esc(ylabel)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> =
            pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", left + x * size, top + size - y * size)).collect();
        let _ =
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        let ly = top + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="475" y1="{}" x2="495" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            ly - 4.0,
            ly - 4.0
        );
        let _ = writeln!(s, r#"<text x="500" y="{ly}">{}</text>"#, esc(name));
    }
    s.push_str("</svg>\n");
    s
}

fn esc(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate;

    fn sample(name: &str) -> (MetricsReport, Curves) {
        let set = ScoredSet::new(vec![0.9, 0.8, 0.3, 0.2, 0.6], vec![1, 0, 1, 0, 1]).unwrap();
        let mut r = MetricsReport::new(name, &evaluate(&set).unwrap(), 100, 20);
        r.train_time_s = 1.25;
        (r, Curves::from_scores(name, &set).unwrap())
    }

    #[test]
    fn csv_header_follows_table_order() {
        let dir = tempfile::tempdir().unwrap();
        let (r, c) = sample("ffn3l");
        emit_report(dir.path(), &[r], &[c]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
        let mut lines = text.lines();
        assert!(lines
            .next()
            .unwrap()
            .starts_with("model,accuracy,auc,precision,recall,f1,threshold,train_time_s,params"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "ffn3l");
        assert_eq!(row[8], "120");
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![sample("a").0, sample("b").0];
        emit_report(dir.path(), &reports, &[]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("comparison.json")).unwrap();
        let back: Vec<MetricsReport> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, reports);
        assert!(text.contains("\"report_version\": 1"));
        assert!(!dir.path().join("roc.svg").exists());
    }

    #[test]
    fn svg_has_one_polyline_per_model() {
        let dir = tempfile::tempdir().unwrap();
        let (ra, ca) = sample("a");
        let (rb, cb) = sample("b");
        let files = emit_report(dir.path(), &[ra, rb], &[ca, cb]).unwrap();
        assert_eq!(files.len(), 7);
        let svg = std::fs::read_to_string(dir.path().join("roc.svg")).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        let roc = std::fs::read_to_string(dir.path().join("roc.csv")).unwrap();
        assert!(roc.starts_with("model,fpr,tpr\na,0,0\n"));
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, "x").unwrap();
        let err = emit_report(&file.join("sub"), &[sample("a").0], &[]).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }
}

use std::path::Path;

use chrono::NaiveDate;

use super::RawDataset;
use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Column layout of a wildfire table: a date column, a binary label column,
/// and every remaining column as a numeric feature.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub date_column: String,
    pub label_column: String,
    /// Required number of feature columns, if fixed.
    pub feature_count: Option<usize>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema { date_column: "acq_date".into(), label_column: "is_fire".into(), feature_count: Some(276) }
    }
}

impl Schema {
    pub fn with_features(feature_count: usize) -> Self {
        Schema { feature_count: Some(feature_count), ..Default::default() }
    }
}

/// Reads a CSV file. Data rows are numbered from 1 in error messages.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv(reader: impl std::io::Read, schema: &Schema) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Schema(format!("missing required column {name:?}")))
    };
    let date_col = find(&schema.date_column)?;
    let label_col = find(&schema.label_column)?;
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&i| i != date_col && i != label_col).collect();
    if let Some(n) = schema.feature_count {
        if feature_cols.len() != n {
            return Err(Error::Schema(format!("expected {n} feature columns, found {}", feature_cols.len())));
        }
    }
    if feature_cols.is_empty() {
        return Err(Error::Schema("no feature columns".into()));
    }
    let mut ds = RawDataset::empty(feature_cols.iter().map(|&i| header[i].to_string()).collect());
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: "*".into(),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&rec[date_col], DATE_FORMAT).map_err(|e| Error::Parse {
            row,
            column: schema.date_column.clone(),
            message: format!("invalid date {:?}: {e}", &rec[date_col]),
        })?;
        let label = match rec[label_col].parse::<f64>() {
            Ok(0.0) => 0,
            Ok(1.0) => 1,
            _ => {
                return Err(Error::Parse {
                    row,
                    column: schema.label_column.clone(),
                    message: format!("label {:?} is not 0 or 1", &rec[label_col]),
                })
            }
        };
        for &c in &feature_cols {
            let v = rec[c].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                row,
                column: header[c].to_string(),
                message: format!("value {:?} is not a finite number", &rec[c]),
            })?;
            ds.features.push(v);
        }
        ds.dates.push(date);
        ds.labels.push(label);
        ds.source_rows.push(i);
    }
    Ok(ds)
}

/// Writes the dataset with shortest round-trip float formatting, so reading
/// the file back reproduces every value exactly.
pub fn write_csv(ds: &RawDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(ds, std::io::BufWriter::new(file))
}

pub fn write_csv_to(ds: &RawDataset, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["acq_date".to_string(), "is_fire".to_string()];
    header.extend(ds.feature_names.iter().cloned());
    w.write_record(&header)?;
    let mut fields = Vec::with_capacity(header.len());
    for r in 0..ds.len() {
        fields.clear();
        fields.push(ds.dates[r].format(DATE_FORMAT).to_string());
        fields.push(ds.labels[r].to_string());
        fields.extend(ds.row(r).iter().map(|v| v.to_string()));
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

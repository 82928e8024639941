use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{default_cutoff, Schema};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, Variant};
use crate::train::TrainConfig;

/// Environment variable that overrides `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "IWORLD_OUTPUT_DIR";

/// Keys derived from other settings and therefore not settable.
const DERIVED_KEYS: [(&str, &str); 4] = [
    ("model.seed", "set `seed`"),
    ("model.slice_seed", "set `seed`"),
    ("train.seed", "set `seed`"),
    ("model.input_dim", "set `data.features`"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub pos: usize,
    pub neg: usize,
    pub separation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { pos: 2000, neg: 2000, separation: 6.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// CSV input; synthetic data is generated when absent.
    pub csv: Option<PathBuf>,
    pub cutoff: NaiveDate,
    pub date_column: String,
    pub label_column: String,
    pub features: usize,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        let schema = Schema::default();
        DataConfig {
            csv: None,
            cutoff: default_cutoff(),
            date_column: schema.date_column,
            label_column: schema.label_column,
            features: schema.feature_count.unwrap_or(276),
            synth: SynthConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn schema(&self) -> Schema {
        Schema {
            date_column: self.date_column.clone(),
            label_column: self.label_column.clone(),
            feature_count: Some(self.features),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceSource {
    /// Archive holding slice weights to use instead of seeded ones.
    pub archive: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub variants: Vec<Variant>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig { variants: Variant::ALL.to_vec() }
    }
}

/// Every setting of an experiment. Addressed externally through flat
/// dotted keys such as `train.max_epochs` or `model.slice.hidden`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub slice: SliceSource,
    pub compare: CompareConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            slice: SliceSource::default(),
            compare: CompareConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn flatten_into(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, child, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) {
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let map = node.as_object_mut().expect("settable keys address objects");
        if parts.peek().is_none() {
            map.insert(part.to_string(), value);
            return;
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Interprets a command-line string as a value of the same JSON type as
/// `default`. Lists accept JSON or comma-separated items.
fn parse_flag(raw: &str, default: &Value) -> std::result::Result<Value, String> {
    let raw = raw.trim();
    match default {
        Value::String(_) => Ok(Value::String(raw.to_string())),
        Value::Null => Ok(if raw.is_empty() || raw == "null" { Value::Null } else { Value::String(raw.to_string()) }),
        Value::Array(items) => {
            if raw.starts_with('[') {
                return serde_json::from_str(raw).map_err(|e| e.to_string());
            }
            let proto = items.first().cloned().unwrap_or(Value::String(String::new()));
            raw.split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| parse_flag(s, &proto))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        _ => serde_json::from_str(raw).map_err(|e| format!("{raw:?} is not a valid value ({e})")),
    }
}

impl ExperimentConfig {
    /// Every settable key with its default value, in key order.
    pub fn default_keys() -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        let v = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
        flatten_into("", &v, &mut out);
        for (k, _) in DERIVED_KEYS {
            out.remove(k);
        }
        out
    }

    /// The settings as flat dotted keys.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        let v = serde_json::to_value(self).expect("config serializes");
        flatten_into("", &v, &mut out);
        for (k, _) in DERIVED_KEYS {
            out.remove(k);
        }
        out
    }

    /// Builds a configuration from defaults, then a flat JSON config file,
    /// then the output-dir environment override, then command-line
    /// `(key, value)` pairs. All problems are reported together.
    pub fn resolve(file: Option<&Path>, env_output: Option<&str>, flags: &[(String, String)]) -> Result<Self> {
        let defaults = Self::default_keys();
        let mut bad = Vec::new();
        let mut values: Vec<(String, Value)> = Vec::new();

        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => values.extend(m),
                Ok(_) => bad.push(format!("{}: config must be a JSON object of dotted keys", path.display())),
                Err(e) => bad.push(format!("{}: {e}", path.display())),
            }
        }
        if let Some(dir) = env_output.filter(|d| !d.is_empty()) {
            values.push(("output.dir".into(), Value::String(dir.into())));
        }
        for (key, raw) in flags {
            match defaults.get(key) {
                Some(d) => match parse_flag(raw, d) {
                    Ok(v) => values.push((key.clone(), v)),
                    Err(e) => bad.push(format!("{key}: {e}")),
                },
                None => values.push((key.clone(), Value::String(raw.clone()))),
            }
        }

        let mut root = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
        for (key, value) in values {
            if let Some((_, hint)) = DERIVED_KEYS.iter().find(|(k, _)| *k == key) {
                bad.push(format!("{key} is derived; {hint} instead"));
                continue;
            }
            if !defaults.contains_key(&key) {
                bad.push(format!("unknown key {key:?}"));
                continue;
            }
            // Type-check each key on its own so every bad value is named.
            let mut probe = serde_json::to_value(ExperimentConfig::default()).expect("config serializes");
            set_path(&mut probe, &key, value.clone());
            if let Err(e) = serde_json::from_value::<ExperimentConfig>(probe) {
                bad.push(format!("{key}: {e}"));
                continue;
            }
            set_path(&mut root, &key, value);
        }
        if !bad.is_empty() {
            return Err(Error::Config(bad));
        }
        let cfg: ExperimentConfig = serde_json::from_value(root).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Model settings for `variant` with the experiment seed and data width
    /// applied.
    pub fn model_config(&self, variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            input_dim: self.data.features,
            seed: self.seed,
            slice_seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut collect = |r: Result<()>, scope: &str| match r {
            Ok(()) => {}
            Err(Error::Config(v)) => bad.extend(v.into_iter().map(|m| format!("{scope}: {m}"))),
            Err(e) => bad.push(format!("{scope}: {e}")),
        };
        collect(self.model_config(self.model.variant).validate(), "model");
        collect(self.train_config().validate(), "train");
        if self.data.features == 0 {
            bad.push("data.features must be positive".into());
        }
        if self.data.csv.is_none() && (self.data.synth.pos == 0 || self.data.synth.neg == 0) {
            bad.push("data.synth.pos and data.synth.neg must be positive".into());
        }
        if !self.data.synth.separation.is_finite() || self.data.synth.separation < 0.0 {
            bad.push("data.synth.separation must be finite and non-negative".into());
        }
        if self.compare.variants.is_empty() {
            bad.push("compare.variants must name at least one variant".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_match_training_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!(c.seed, 42);
        assert_eq!(c.data.features, 276);
        assert_eq!(c.data.cutoff, NaiveDate::from_ymd_opt(2022, 1, 1).unwrap());
        assert_eq!(c.train.micro_batch * c.train.accumulation, 128);
        assert_eq!(c.train.accumulation, 4);
        assert_eq!((c.train.projection.lr, c.train.classifier.lr), (1e-3, 5e-4));
        assert_eq!((c.train.projection.weight_decay, c.train.classifier.weight_decay), (1e-2, 1e-3));
        assert_eq!((c.train.patience, c.train.max_epochs), (10, 300));
        assert_eq!(c.model.variant, Variant::InternalWorld);
        c.validate().unwrap();
    }

    #[test]
    fn keys_cover_nested_settings() {
        let keys = ExperimentConfig::default_keys();
        for k in [
            "seed",
            "train.max_epochs",
            "train.projection.lr",
            "model.slice.hidden",
            "data.synth.separation",
            "output.dir",
        ] {
            assert!(keys.contains_key(k), "{k}");
        }
        assert!(!keys.contains_key("model.seed"));
        assert_eq!(keys["train.loss.kind"], Value::String("weighted_bce".into()));
    }

    #[test]
    fn flags_override_file_and_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train.max_epochs": 7, "seed": 3, "output.dir": "from-file"}"#).unwrap();
        let c = ExperimentConfig::resolve(Some(&path), None, &flags(&[("train.max_epochs", "9")])).unwrap();
        assert_eq!(c.train.max_epochs, 9);
        assert_eq!(c.seed, 3);
        assert_eq!(c.output.dir, PathBuf::from("from-file"));
        let c = ExperimentConfig::resolve(Some(&path), Some("env"), &[]).unwrap();
        assert_eq!(c.output.dir, PathBuf::from("env"));
        let c = ExperimentConfig::resolve(Some(&path), Some("env"), &flags(&[("output.dir", "flag")])).unwrap();
        assert_eq!(c.output.dir, PathBuf::from("flag"));
    }

    #[test]
    fn typed_flag_parsing() {
        let c = ExperimentConfig::resolve(
            None,
            None,
            &flags(&[
                ("model.classifier_widths", "32,16"),
                ("compare.variants", "ffn3l,cnn1d"),
                ("train.loss.kind", "balanced_focal"),
                ("data.csv", "x.csv"),
                ("model.ffn_dropout_every_layer", "false"),
            ]),
        )
        .unwrap();
        assert_eq!(c.model.classifier_widths, vec![32, 16]);
        assert_eq!(c.compare.variants, vec![Variant::Ffn3l, Variant::Cnn1d]);
        assert_eq!(c.data.csv, Some(PathBuf::from("x.csv")));
        assert!(!c.model.ffn_dropout_every_layer);
    }

    #[test]
    fn all_problems_listed_at_once() {
        let err = ExperimentConfig::resolve(
            None,
            None,
            &flags(&[("train.max_epochs", "many"), ("nope", "1"), ("model.seed", "1"), ("train.patience", "-2")]),
        )
        .unwrap_err();
        match err {
            Error::Config(v) => {
                assert_eq!(v.len(), 4, "{v:?}");
                assert!(v.iter().any(|m| m.contains("unknown key \"nope\"")));
                assert!(v.iter().any(|m| m.starts_with("train.max_epochs")));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn semantic_validation_runs_after_parsing() {
        let err = ExperimentConfig::resolve(None, None, &flags(&[("train.micro_batch", "0"), ("model.branches", "5")]))
            .unwrap_err();
        match err {
            Error::Config(v) => assert!(v.len() >= 2, "{v:?}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn flat_view_round_trips() {
        let c = ExperimentConfig::resolve(None, None, &flags(&[("train.max_epochs", "5")])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resolved.json");
        std::fs::write(&path, serde_json::to_string(&c.to_flat()).unwrap()).unwrap();
        assert_eq!(ExperimentConfig::resolve(Some(&path), None, &[]).unwrap(), c);
    }

    #[test]
    fn malformed_file_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "[1, 2]").unwrap();
        assert!(matches!(ExperimentConfig::resolve(Some(&path), None, &[]), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentConfig::resolve(Some(&dir.path().join("missing.json")), None, &[]),
            Err(Error::NotFound(_))
        ));
    }
}

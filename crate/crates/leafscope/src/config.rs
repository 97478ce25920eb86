//! Run configuration: one JSON document, `LEAFSCOPE_<SECTION>_<KEY>`
//! environment overrides and command-line flags.
//! Precedence: flags > environment > file > defaults.

use std::path::{Path, PathBuf};

use leafscope_core::augment::AugmentConfig;
use leafscope_core::backbone::BackboneKind;
use leafscope_core::imgproc::PreprocessConfig;
use leafscope_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{io, Error, Result};

pub const ENV_PREFIX: &str = "LEAFSCOPE_";
pub const SECTIONS: [&str; 6] = ["dataset", "preprocess", "augment", "model", "train", "output"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Class-per-directory image root.
    pub root: String,
    /// Train fraction per class.
    pub ratio: f64,
    pub seed: u64,
    /// Per-class validation fraction; 0 validates on the test split.
    pub validation_ratio: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            root: String::new(),
            ratio: 0.8,
            seed: 0,
            validation_ratio: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub backbone: String,
    pub pretrained: bool,
    pub dropout_rate: f64,
    /// Directory holding `<backbone>.lsw` files for pretrained backbones.
    pub weights_dir: Option<String>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            backbone: "densenet201".into(),
            pretrained: true,
            dropout_rate: 0.3,
            weights_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub run_dir: String,
    /// Store preprocessed images under `<run>/cache` during `prepare`.
    pub cache_preprocessed: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            run_dir: "runs/default".into(),
            cache_preprocessed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub output: OutputSection,
}

/// Command-line overrides shared by every config-driven subcommand.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlagOverrides {
    /// Applied to the dataset, augment and train seeds.
    pub seed: Option<u64>,
    pub backbone: Option<String>,
    pub epochs: Option<usize>,
}

fn env_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn section_mut<'a>(doc: &'a mut Map<String, Value>, section: &str) -> Result<&'a mut Map<String, Value>> {
    let slot = doc.entry(section.to_string()).or_insert_with(|| Value::Object(Map::new()));
    slot.as_object_mut()
        .ok_or_else(|| Error::config(format!("section `{section}` must be an object")))
}

/// Applies `LEAFSCOPE_<SECTION>_<KEY>` variables. Values are parsed as JSON
/// when possible (numbers, booleans, arrays) and taken verbatim otherwise.
pub fn apply_env(doc: &mut Map<String, Value>, env: &[(String, String)]) -> Result<()> {
    let mut vars: Vec<&(String, String)> = env.iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (name, raw) in vars {
        let rest = name[ENV_PREFIX.len()..].to_ascii_lowercase();
        let (section, key) = rest
            .split_once('_')
            .filter(|(s, k)| SECTIONS.contains(s) && !k.is_empty())
            .ok_or_else(|| {
                Error::config(format!(
                    "environment override {name}: expected {ENV_PREFIX}<SECTION>_<KEY> with SECTION one of {SECTIONS:?}"
                ))
            })?;
        section_mut(doc, section)?.insert(key.to_string(), env_value(raw));
    }
    Ok(())
}

pub fn apply_flags(doc: &mut Map<String, Value>, flags: &FlagOverrides) -> Result<()> {
    if let Some(seed) = flags.seed {
        for section in ["dataset", "augment", "train"] {
            section_mut(doc, section)?.insert("seed".into(), seed.into());
        }
    }
    if let Some(b) = &flags.backbone {
        section_mut(doc, "model")?.insert("backbone".into(), b.clone().into());
    }
    if let Some(e) = flags.epochs {
        section_mut(doc, "train")?.insert("epochs".into(), e.into());
    }
    Ok(())
}

fn section<T: serde::de::DeserializeOwned + Default>(doc: &Map<String, Value>, name: &str) -> Result<T> {
    match doc.get(name) {
        None => Ok(T::default()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::config(format!("section `{name}`: {e}"))),
    }
}

impl RunConfig {
    /// Builds a config from a parsed document. Each section is decoded on its
    /// own so diagnostics name the offending section and field.
    pub fn from_document(doc: &Map<String, Value>) -> Result<Self> {
        if let Some(unknown) = doc.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(Error::config(format!(
                "unknown section `{unknown}`, expected one of {SECTIONS:?}"
            )));
        }
        Ok(Self {
            dataset: section(doc, "dataset")?,
            preprocess: section(doc, "preprocess")?,
            augment: section(doc, "augment")?,
            model: section(doc, "model")?,
            train: section(doc, "train")?,
            output: section(doc, "output")?,
        })
    }

    /// Reads, overrides and validates. Nothing is written to disk.
    pub fn resolve(file: Option<&Path>, env: &[(String, String)], flags: &FlagOverrides) -> Result<Self> {
        let mut doc = match file {
            None => Map::new(),
            Some(path) => {
                let bytes = io::read_bytes(path)?;
                match serde_json::from_slice::<Value>(&bytes) {
                    Ok(Value::Object(m)) => m,
                    Ok(_) => return Err(Error::config(format!("{}: top level must be an object", path.display()))),
                    Err(e) => return Err(Error::config(format!("{}: {e}", path.display()))),
                }
            }
        };
        apply_env(&mut doc, env)?;
        apply_flags(&mut doc, flags)?;
        let config = Self::from_document(&doc)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.root.trim().is_empty() {
            return Err(Error::config("dataset.root must name the image directory"));
        }
        if !(d.ratio > 0.0 && d.ratio < 1.0) {
            return Err(Error::config(format!("dataset.ratio must lie in (0, 1), got {}", d.ratio)));
        }
        if !(0.0..1.0).contains(&d.validation_ratio) || d.ratio + d.validation_ratio >= 1.0 {
            return Err(Error::config(format!(
                "dataset.validation_ratio must be >= 0 with ratio + validation_ratio < 1, got {}",
                d.validation_ratio
            )));
        }
        self.preprocess.validate()?;
        self.augment.validate()?;
        let kind: BackboneKind = self
            .model
            .backbone
            .parse()
            .map_err(|e| Error::config(format!("model.backbone: {e}")))?;
        if self.model.pretrained && !kind.has_published_weights() {
            return Err(Error::config(format!(
                "model.pretrained: {} has no published weights",
                kind.name()
            )));
        }
        if !(0.0..1.0).contains(&self.model.dropout_rate) {
            return Err(Error::config(format!(
                "model.dropout_rate must lie in [0, 1), got {}",
                self.model.dropout_rate
            )));
        }
        self.train.validate()?;
        if self.output.run_dir.trim().is_empty() {
            return Err(Error::config("output.run_dir must not be empty"));
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        PathBuf::from(&self.output.run_dir)
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        io::sha256_hex(&serde_json::to_vec(self).expect("serializable config"))
    }
}

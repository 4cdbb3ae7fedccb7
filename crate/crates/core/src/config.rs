//! JSON run configuration. Unknown keys are rejected and every default is
//! written back out in the effective config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::DEFAULT_FRACTIONS;
use crate::model::DEFAULT_INPUT_SIDE;
use crate::preproc::PreprocOp;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub root: PathBuf,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
}

fn default_fractions() -> [f64; 3] {
    DEFAULT_FRACTIONS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocConfig {
    #[serde(default = "default_operator")]
    pub name: String,
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn default_operator() -> String {
    "identity".into()
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self {
            name: default_operator(),
            params: empty_object(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `[height, width]`.
    #[serde(default = "default_input_size")]
    pub input_size: [usize; 2],
    /// Inferred from the dataset when absent.
    #[serde(default)]
    pub num_classes: Option<usize>,
    #[serde(default = "one")]
    pub width_divisor: usize,
}

fn default_input_size() -> [usize; 2] {
    [DEFAULT_INPUT_SIDE, DEFAULT_INPUT_SIDE]
}

fn one() -> usize {
    1
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: default_input_size(),
            num_classes: None,
            width_divisor: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch_size() -> usize {
    32
}

fn default_epochs() -> usize {
    25
}

fn default_lr() -> f64 {
    1e-3
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            lr: default_lr(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("output")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub preproc: PreprocConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            invalid(&key, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The preprocessing operator with its parameters parsed.
    pub fn preproc_op(&self) -> Result<PreprocOp, ConfigError> {
        PreprocOp::parse(&self.preproc.name, &self.preproc.params)
            .map_err(|e| invalid("preproc", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = self.dataset.fractions;
        if !f.iter().all(|v| v.is_finite() && *v > 0.0)
            || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(invalid(
                "dataset.fractions",
                format!("{f:?} must be positive and sum to 1"),
            ));
        }
        self.preproc_op()?;
        if self.model.input_size.contains(&0) {
            return Err(invalid("model.input_size", "extents must be positive"));
        }
        if self.model.num_classes.is_some_and(|k| k < 2) {
            return Err(invalid("model.num_classes", "need at least 2 classes"));
        }
        if self.model.width_divisor == 0 {
            return Err(invalid("model.width_divisor", "must be at least 1"));
        }
        if self.train.batch_size == 0 {
            return Err(invalid("train.batch_size", "must be at least 1"));
        }
        if self.train.epochs == 0 {
            return Err(invalid("train.epochs", "must be at least 1"));
        }
        if !(self.train.lr.is_finite() && self.train.lr >= 0.0) {
            return Err(invalid("train.lr", "must be a finite non-negative number"));
        }
        Ok(())
    }

    /// Copy with every default made explicit, including the operator's
    /// parameters and the inferred class count.
    pub fn effective(&self, num_classes: usize) -> Result<Self, ConfigError> {
        let op = self.preproc_op()?;
        let mut cfg = self.clone();
        cfg.preproc = PreprocConfig {
            name: op.name().to_string(),
            params: op.params(),
        };
        cfg.model.num_classes = Some(num_classes);
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

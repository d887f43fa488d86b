//! Experiment configuration files.

use std::path::{Path, PathBuf};

use ham_core::train::TrainConfig;
use ham_core::{Architecture, DatasetSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("unknown preset `{0}`; available presets: cifar10-full, svhn-full, mnist-desk")]
    UnknownPreset(String),
}

/// Everything one training run needs.
///
/// Every field is required; defaults live in named presets instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    /// Parent directory of the run directory.
    pub output_dir: PathBuf,
    /// Seeds used by `ablate`; `train` uses `train.seed`.
    pub seeds: Vec<u64>,
    pub dataset: DatasetSpec,
    pub model: Architecture,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let parse = |message: String| ConfigError::Parse {
            path: origin.to_string(),
            message,
        };
        let de = toml::Deserializer::parse(text).map_err(|e| parse(e.to_string()))?;
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            parse(format!("at `{path}`: {}", e.into_inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &'static str| move |e: ham_core::Error| ConfigError::Invalid {
            field,
            message: e.to_string(),
        };
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(ConfigError::Invalid {
                field: "run_id",
                message: format!("`{}` is not a valid directory name", self.run_id),
            });
        }
        self.dataset.validate().map_err(invalid("dataset"))?;
        self.train.validate().map_err(invalid("train"))?;
        if self.model.input_shape() != self.dataset.image_shape() {
            return Err(ConfigError::Invalid {
                field: "model.input",
                message: format!(
                    "{:?} does not match the dataset image shape {:?}",
                    self.model.input_shape(),
                    self.dataset.image_shape()
                ),
            });
        }
        if self.model.num_classes() != self.dataset.num_classes() {
            return Err(ConfigError::Invalid {
                field: "model.num_classes",
                message: format!(
                    "{} does not match the dataset's {} classes",
                    self.model.num_classes(),
                    self.dataset.num_classes()
                ),
            });
        }
        Ok(())
    }
}

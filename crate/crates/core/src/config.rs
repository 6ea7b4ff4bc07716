//! The run configuration file: one TOML document with `[plant]`, `[env]`,
//! `[trainer]` and `[eval]` sections. Missing keys take their defaults;
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::PlantParams;
use crate::environment::EnvConfig;
use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::trainer::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub plant: PlantParams<f64>,
    pub env: EnvConfig<f64>,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
}

fn scoped(section: &str, err: Error) -> Error {
    match err {
        Error::InvalidParameter { key, reason } => Error::InvalidParameter {
            key: format!("{section}.{key}"),
            reason,
        },
        other => other,
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: "<string>".into(),
            message: e.to_string(),
        })
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to toml")
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate().map_err(|e| scoped("plant", e))?;
        self.env.validate().map_err(|e| scoped("env", e))?;
        self.trainer.validate().map_err(|e| scoped("trainer", e))?;
        self.eval.validate().map_err(|e| scoped("eval", e))?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises to json")
    }
}

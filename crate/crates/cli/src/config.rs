use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vdep::data::DatasetSpec;
use vdep::model::ModelConfig;
use vdep::trainer::TrainConfig;
use vdep::Error;

/// Contents of a run configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DatasetSpec,
}

impl RunConfigFile {
    /// Parses TOML text; errors carry the dotted key path of the offending
    /// entry and the type serde expected there.
    pub fn parse(text: &str) -> Result<Self, Error> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config {
                field: if path == "." { "<root>".into() } else { path },
                message: inner.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        if self.data.image_side != self.model.image_side {
            return Err(Error::Config {
                field: "data.image_side".into(),
                message: format!("must equal model.image_side ({})", self.model.image_side),
            });
        }
        if self.data.channels != self.model.channels {
            return Err(Error::Config {
                field: "data.channels".into(),
                message: format!("must equal model.channels ({})", self.model.channels),
            });
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(())
    }
}

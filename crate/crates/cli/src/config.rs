//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spikemem::data::{PreprocessConfig, SynthSpec};
use spikemem::pipeline::{ModelSpec, TrainPlan};

use crate::error::{CliError, CliResult};

/// File name of the resolved configuration written next to every output.
pub const RESOLVED_NAME: &str = "config.resolved.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generate trials from the `[synth]` section.
    #[default]
    Synth,
    /// Read a trial bundle from `data.bundle`.
    Bundle,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub bundle: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub synth: SynthSpec,
    pub preprocess: PreprocessConfig,
    pub model: ModelSpec,
    pub plan: TrainPlan,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(bundle) = &cfg.data.bundle {
            if bundle.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.data.bundle = Some(dir.join(bundle));
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.plan.validate()?;
        self.model.lif.validate()?;
        match self.data.source {
            DataSource::Synth => self.synth.validate()?,
            DataSource::Bundle if self.data.bundle.is_none() => {
                return Err(CliError::Config(
                    "data.source = \"bundle\" needs data.bundle".into(),
                ))
            }
            DataSource::Bundle => {}
        }
        Ok(())
    }
}

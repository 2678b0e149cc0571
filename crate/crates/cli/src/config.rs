//! Run configuration file (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scengan::TrainingConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `timestamp,<site>,...` CSV of MW values.
    pub csv: PathBuf,
    /// Manifest TOML; defaults to `manifest.toml` next to the CSV.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            generator_hidden: vec![64, 128],
            discriminator_hidden: vec![128, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Outer iterations between log lines and checkpoint refreshes.
    pub log_interval: u64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("run"),
            log_interval: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub data: DataSection,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfigFile {
    /// Parse, resolving relative data paths against the config's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfigFile = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| {
            if p.is_relative() {
                base.join(p)
            } else {
                p.to_path_buf()
            }
        };
        cfg.data.csv = resolve(&cfg.data.csv);
        cfg.data.manifest = cfg.data.manifest.as_deref().map(resolve);
        cfg.training.validate().map_err(CliError::from)?;
        if cfg.output.log_interval == 0 {
            return Err(CliError::usage("output.log_interval must be >= 1"));
        }
        Ok(cfg)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data.manifest.clone().unwrap_or_else(|| {
            self.data
                .csv
                .parent()
                .unwrap_or(Path::new("."))
                .join("manifest.toml")
        })
    }

    /// Every field spelled out, including defaults.
    pub fn to_toml(&self) -> Result<String, CliError> {
        let mut echo = self.clone();
        echo.data.manifest = Some(self.manifest_path());
        toml::to_string(&echo).map_err(|e| CliError::usage(format!("config serialization: {e}")))
    }
}

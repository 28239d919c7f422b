//! The run configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slm_ie::pipeline::TrainConfig;

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Annotated training sentences.
    pub train: Option<PathBuf>,
    /// Syntactic treebank for stage 1.
    pub treebank: Option<PathBuf>,
    /// Head rules; the built-in rules are used when absent.
    pub head_rules: Option<PathBuf>,
    /// Annotated test sentences.
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
    pub data: DataPaths,
    pub training: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            workers: 0,
            data: DataPaths::default(),
            training: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative data paths are resolved against its
    /// directory. A missing file is a usage error, a malformed one a
    /// config error.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.is_file() {
            return Err(CliError::Usage(format!("config file {} not found", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.data.train,
            &mut cfg.data.treebank,
            &mut cfg.data.head_rules,
            &mut cfg.data.test,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.training.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

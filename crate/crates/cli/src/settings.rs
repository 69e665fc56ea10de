//! Effective run configuration: command-line flags over the TOML file over
//! built-in defaults.

use std::path::{Path, PathBuf};

use gestation_core::analytics::StrataSpec;
use gestation_core::synth::SynthConfig;
use gestation_core::{CohortFilter, EngineConfig, Error, Result};
use serde::{Deserialize, Serialize};

pub const DATA_DIR_ENV: &str = "TEDPC_DATA_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub persons: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub ga_concepts: Option<PathBuf>,
    pub dod_concepts: Option<PathBuf>,
    pub index_events: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// 0 uses every available core.
    pub threads: usize,
    pub engine: EngineConfig,
    pub cohort: CohortFilter,
    pub strata: StrataSpec,
    pub simulate: SynthConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        self.cohort.validate()?;
        self.strata.validate()?;
        self.simulate.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn worker_threads(&self) -> usize {
        match self.threads {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
            n => n,
        }
    }
}

/// Resolves an input path. Relative paths missing from the working
/// directory are looked up under the data directory.
pub fn resolve_input(given: Option<&Path>, default_name: &str, data_dir: Option<&Path>) -> Option<PathBuf> {
    match (given, data_dir) {
        (Some(p), Some(dir)) if p.is_relative() && !p.exists() => Some(dir.join(p)),
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(dir)) => Some(dir.join(default_name)),
        (None, None) => None,
    }
}

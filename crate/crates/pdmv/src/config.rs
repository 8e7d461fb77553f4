//! Run-config files: a TOML document holding the sampler configuration, the experiment
//! name, an optional output directory and analysis settings.

use std::fs;
use std::path::{Path, PathBuf};

use pdmv_core::analysis::FesAxis;
use pdmv_core::sampler::SimConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::store::sha256_hex;

fn default_cutoff() -> f64 {
    10.0
}

/// Grid and comparison settings for `analyze` and `reference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FesSettings {
    pub axes: Vec<FesAxis>,
    /// CV coordinates on the grid; the first `axes.len()` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<Vec<usize>>,
    /// Bins with reference free energy above this many `k_B T` are left out of the RMSE.
    #[serde(default = "default_cutoff")]
    pub cutoff_kt: f64,
}

impl FesSettings {
    pub fn subset(&self) -> Vec<usize> {
        self.subset.clone().unwrap_or_else(|| (0..self.axes.len()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fes: Option<FesSettings>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = Self::parse(&text).map_err(|e| CliError::format(path, e))?;
        cfg.sim.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Output directory: the command-line override, else the configured one.
    pub fn output_dir(&self, overridden: Option<&Path>) -> Result<PathBuf> {
        overridden
            .map(Path::to_path_buf)
            .or_else(|| self.output.clone())
            .ok_or_else(|| CliError::Usage("no output directory: pass --output or set `output`".into()))
    }

    pub fn fes(&self) -> Result<&FesSettings> {
        self.fes.as_ref().ok_or_else(|| CliError::Usage("config has no [fes] section".into()))
    }
}

/// Hash of the canonical JSON form of the sampler configuration.
pub fn config_hash(sim: &SimConfig) -> String {
    sha256_hex(serde_json::to_string(sim).expect("config serializes").as_bytes())
}

//! Optional JSON configuration file. Every key mirrors a flag.

use std::path::{Path, PathBuf};

use ptl_core::synth::SyntheticConfig;
use serde::Deserialize;

use crate::error::{CliError, ResultExt};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    pub n: Option<usize>,
    pub iterations: Option<u64>,
    pub scales: Option<Vec<u32>>,
    pub partial: Option<bool>,
    pub dim: Option<usize>,
    pub ridge: Option<f64>,
    pub gamma: Option<f64>,
    pub category: Option<String>,
    pub embedder: Option<String>,
    pub transformer: Option<String>,
    pub work_dir: Option<PathBuf>,
    pub timeout: Option<u64>,
    pub bins: Option<usize>,
    /// World parameters for `synth`; flags override individual fields.
    pub synthetic: Option<SyntheticConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let bytes = std::fs::read(path).usage()?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }
}

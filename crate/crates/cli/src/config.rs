//! TOML run configuration: `[architecture]`, `[init]` and `[training]`.
//!
//! Every key is required except the Adam constants (`adam_beta1 = 0.9`,
//! `adam_beta2 = 0.999`, `adam_eps = 1e-8`) and `clip_norm` (off).

use std::fs;
use std::path::Path;

use isslstm::lstm::Architecture;
use isslstm::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub n_u: usize,
    pub hidden: Vec<usize>,
    pub n_y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    /// Weights are drawn uniformly from `±scale/√fan_in`; biases start at zero.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub architecture: ArchitectureConfig,
    pub init: InitConfig,
    pub training: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Parse { path: origin.to_path_buf(), msg: e.to_string() })?;
        cfg.validate().map_err(|msg| CliError::Parse { path: origin.to_path_buf(), msg })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn architecture(&self) -> Architecture {
        let a = &self.architecture;
        Architecture::new(a.n_u, a.hidden.clone(), a.n_y).expect("validated architecture")
    }

    fn validate(&self) -> Result<(), String> {
        let a = &self.architecture;
        Architecture::new(a.n_u, a.hidden.clone(), a.n_y).map_err(|e| e.to_string())?;
        if !(self.init.scale > 0.0 && self.init.scale.is_finite()) {
            return Err(format!("init.scale must be positive, got {}", self.init.scale));
        }
        self.training.validate().map_err(|e| e.to_string())
    }
}

//! JSON checkpoints.
//!
//! Floats are written in shortest round-trip decimal form, so loading a
//! checkpoint reproduces every parameter bit for bit and the stability
//! certificate can be re-derived exactly.

use std::fs;
use std::path::Path;

use isslstm::data::{write_atomic, NormStats};
use isslstm::iss::{network_condition, IssReport};
use isslstm::lstm::{Architecture, NetworkParams};
use isslstm::training::{StopReason, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::InitConfig;
use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    /// Seconds since the Unix epoch; taken from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: u64,
    pub iterations_run: usize,
    pub stop_reason: Option<StopReason>,
    pub best_val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    pub params: NetworkParams,
    pub norm: NormStats,
    /// Input bound the stability condition was checked against.
    pub u_max: Vec<f64>,
    pub train_config: TrainConfig,
    pub init: InitConfig,
    pub iss: IssReport,
    pub provenance: Provenance,
}

/// `SOURCE_DATE_EPOCH` if set and valid, otherwise the wall clock.
pub fn build_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()).unwrap_or_else(|| {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
    })
}

impl Checkpoint {
    /// Assembles a checkpoint and computes its stability report.
    pub fn new(
        params: NetworkParams,
        norm: NormStats,
        train_config: TrainConfig,
        init: InitConfig,
        provenance: Provenance,
    ) -> Result<Self, CliError> {
        params.validate()?;
        let u_max = vec![1.0; params.n_u()];
        let iss = network_condition(&params, &u_max)?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            architecture: params.architecture(),
            params,
            norm,
            u_max,
            train_config,
            init,
            iss,
            provenance,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self, CliError> {
        let parse_err = |msg: String| CliError::Parse { path: origin.to_path_buf(), msg };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => return Err(parse_err(format!("checkpoint format version {v}, expected {FORMAT_VERSION}"))),
            None => return Err(parse_err("missing format_version".into())),
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        ckpt.params.validate().map_err(|e| parse_err(e.to_string()))?;
        if ckpt.params.architecture() != ckpt.architecture {
            return Err(parse_err("architecture does not match the parameter shapes".into()));
        }
        if ckpt.norm.n_u() != ckpt.architecture.n_u || ckpt.norm.n_y() != ckpt.architecture.n_y {
            return Err(parse_err("normalisation statistics do not match the architecture".into()));
        }
        if ckpt.u_max.len() != ckpt.architecture.n_u {
            return Err(parse_err(format!("u_max has {} entries for {} inputs", ckpt.u_max.len(), ckpt.architecture.n_u)));
        }
        let recomputed = network_condition(&ckpt.params, &ckpt.u_max)?;
        if recomputed != ckpt.iss {
            return Err(parse_err("stored stability report does not match the parameters".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        Ok(write_atomic(path, self.to_json().as_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_json(&text, path)
    }
}

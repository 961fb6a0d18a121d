//! Penalised training of LSTM networks.
//!
//! The loss is the free-run MSE plus `ρ Σ_l max(ISS_l + γ, 0)` where `ISS_l`
//! is the layer's condition value minus one. Gradients come from exact
//! full-sequence BPTT plus a subgradient of the penalty, and parameters are
//! updated with full-batch Adam. Checkpoints are only kept when validation MSE
//! improves and every layer satisfies the stability condition.

mod adam;
mod bptt;
mod early_stop;
pub mod gradcheck;
mod loss;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iss::IssError;
use crate::lstm::{LstmError, NetworkParams};

pub use adam::{adam_step, AdamState};
pub use bptt::{bptt_gradients, loss_and_gradients};
pub use early_stop::{history_csv, train, HistoryRecord, StopReason, TrainOutcome};
pub use loss::{loss, mse, penalty, penalty_gradient, stability_term};

/// Penalty weight, margin and schedule used for the published experiments.
pub const PROTOCOL_RHO: f64 = 0.05;
pub const PROTOCOL_GAMMA: f64 = 0.05;
pub const PROTOCOL_KAPPA_MAX: usize = 2500;
pub const PROTOCOL_KAPPA_VAL: usize = 25;
pub const PROTOCOL_P_VAL: usize = 20;

pub const DEFAULT_ADAM_BETA1: f64 = 0.9;
pub const DEFAULT_ADAM_BETA2: f64 = 0.999;
pub const DEFAULT_ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Iss(#[from] IssError),
    #[error("no stable checkpoint: no validation check found an improving, ISS-satisfying network ({} checks)", history.len())]
    NoStableCheckpoint { last_params: Box<NetworkParams>, history: Vec<HistoryRecord> },
}

fn default_beta1() -> f64 {
    DEFAULT_ADAM_BETA1
}
fn default_beta2() -> f64 {
    DEFAULT_ADAM_BETA2
}
fn default_eps() -> f64 {
    DEFAULT_ADAM_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Penalty weight ρ.
    pub rho: f64,
    /// Stability margin γ.
    pub gamma_margin: f64,
    /// Adam learning rate η.
    pub eta: f64,
    pub kappa_max: usize,
    pub kappa_val: usize,
    pub p_val: usize,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    pub seed: u64,
    /// Global L2 gradient clipping; off when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    /// Protocol constants with the given learning rate and seed.
    pub fn protocol(eta: f64, seed: u64) -> Self {
        Self {
            rho: PROTOCOL_RHO,
            gamma_margin: PROTOCOL_GAMMA,
            eta,
            kappa_max: PROTOCOL_KAPPA_MAX,
            kappa_val: PROTOCOL_KAPPA_VAL,
            p_val: PROTOCOL_P_VAL,
            adam_beta1: DEFAULT_ADAM_BETA1,
            adam_beta2: DEFAULT_ADAM_BETA2,
            adam_eps: DEFAULT_ADAM_EPS,
            seed,
            clip_norm: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad("rho must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.gamma_margin) {
            return bad("gamma_margin must lie in [0, 1)");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if self.kappa_val == 0 || self.kappa_max == 0 {
            return bad("kappa_max and kappa_val must be positive");
        }
        if self.kappa_val > self.kappa_max {
            return bad("kappa_val must not exceed kappa_max");
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(TrainError::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return bad("adam_eps must be positive");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad("clip_norm must be positive");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_constants() {
        let c = TrainConfig::protocol(1e-3, 0);
        assert_eq!((c.rho, c.gamma_margin), (0.05, 0.05));
        assert_eq!((c.kappa_max, c.kappa_val, c.p_val), (2500, 25, 20));
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let base = TrainConfig::protocol(1e-3, 0);
        let cases: Vec<Box<dyn Fn(&mut TrainConfig)>> = vec![
            Box::new(|c| c.kappa_val = 3000),
            Box::new(|c| c.adam_beta1 = 1.0),
            Box::new(|c| c.adam_beta2 = 0.0),
            Box::new(|c| c.gamma_margin = 1.0),
            Box::new(|c| c.eta = 0.0),
            Box::new(|c| c.rho = -1.0),
            Box::new(|c| c.clip_norm = Some(0.0)),
        ];
        for f in cases {
            let mut c = base.clone();
            f(&mut c);
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}

use serde::{Deserialize, Serialize};

use super::TrainConfig;

/// First and second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected Adam update in place. When `cfg.clip_norm` is set the
/// gradient is first rescaled to at most that global L2 norm.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "parameter/moment length mismatch");
    let clip = match cfg.clip_norm {
        Some(c) => {
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for k in 0..params.len() {
        let g = grads[k] * clip;
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g;
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g;
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        params[k] -= cfg.eta * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
}

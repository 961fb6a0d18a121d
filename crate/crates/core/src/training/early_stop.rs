use std::fmt::Write;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::bptt::loss_and_gradients;
use super::loss::{check_data, check_u_max, mse};
use super::{TrainConfig, TrainError};
use crate::data::Sequence;
use crate::iss::network_condition;
use crate::lstm::NetworkParams;

/// One validation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    /// Loss of the iterate the last update started from.
    pub train_loss: f64,
    pub val_mse: f64,
    /// Per-layer `σ̄_f + σ̄_i‖R_g‖∞`.
    pub conditions: Vec<f64>,
    /// Whether this check replaced the stored parameters.
    pub stored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best_params: NetworkParams,
    pub best_val_mse: f64,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
    pub iss_verdict: bool,
    pub history: Vec<HistoryRecord>,
}

/// Full-batch Adam with ISS-gated early stopping.
///
/// Every `kappa_val` iterations the validation MSE and the stability
/// condition are evaluated. Parameters are stored only when the validation
/// MSE is strictly below the best stored value and every layer satisfies the
/// condition. A check counts towards patience when its validation MSE does
/// not beat the stored one, so the counter stays at zero until the first
/// stable checkpoint exists. Training stops once more than `p_val`
/// consecutive checks fail to improve, or after `kappa_max` iterations.
pub fn train(
    np0: &NetworkParams,
    train_data: &[Sequence],
    val_data: &[Sequence],
    cfg: &TrainConfig,
    u_max: &[f64],
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    np0.validate()?;
    check_data(np0, train_data)?;
    check_data(np0, val_data)?;
    check_u_max(np0, u_max)?;

    let mut params = np0.clone();
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len());
    let mut best: Option<(NetworkParams, f64)> = None;
    let mut history = Vec::new();
    let mut since_store = 0;
    let mut stop_reason = StopReason::MaxIterations;
    let mut iterations_run = 0;

    for it in 1..=cfg.kappa_max {
        let (train_loss, grad) = loss_and_gradients(&params, train_data, cfg, u_max)?;
        if !train_loss.is_finite() {
            return Err(TrainError::Domain(format!("training loss became non-finite at iteration {it}")));
        }
        adam_step(&mut flat, &grad.flatten(), &mut adam, cfg);
        params.assign_flat(&flat)?;
        iterations_run = it;

        if it % cfg.kappa_val != 0 {
            continue;
        }
        let val_mse = mse(&params, val_data)?;
        let report = network_condition(&params, u_max)?;
        let improved = best.as_ref().is_none_or(|(_, b)| val_mse < *b);
        let stored = improved && report.verdict;
        if stored {
            best = Some((params.clone(), val_mse));
        }
        if improved {
            since_store = 0;
        } else {
            since_store += 1;
        }
        let conditions: Vec<f64> = report.layers.iter().map(|r| r.condition_value).collect();
        info!(
            "iter {it:>5}  loss {train_loss:.6e}  val {val_mse:.6e}  cond {:?}{}",
            conditions,
            if stored { "  stored" } else { "" }
        );
        history.push(HistoryRecord { iteration: it, train_loss, val_mse, conditions, stored });
        if since_store > cfg.p_val {
            debug!("patience exhausted after {since_store} checks without improvement");
            stop_reason = StopReason::Patience;
            break;
        }
    }

    match best {
        Some((best_params, best_val_mse)) => {
            let iss_verdict = network_condition(&best_params, u_max)?.verdict;
            Ok(TrainOutcome { best_params, best_val_mse, iterations_run, stop_reason, iss_verdict, history })
        }
        None => Err(TrainError::NoStableCheckpoint { last_params: Box::new(params), history }),
    }
}

/// CSV with columns `iteration,train_loss,val_mse,cond_1..cond_L`.
pub fn history_csv(history: &[HistoryRecord]) -> String {
    let layers = history.first().map_or(0, |r| r.conditions.len());
    let mut out = String::from("iteration,train_loss,val_mse");
    for l in 1..=layers {
        write!(out, ",cond_{l}").unwrap();
    }
    out.push('\n');
    for r in history {
        write!(out, "{},{:?},{:?}", r.iteration, r.train_loss, r.val_mse).unwrap();
        for c in &r.conditions {
            write!(out, ",{c:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::{init_params, Architecture};
    use crate::numerics::Vector;

    fn toy_data(seed: u64) -> Vec<Sequence> {
        (0..2)
            .map(|e| {
                let u: Vec<Vector> =
                    (0..30).map(|k| Vector::new(vec![((k + e + seed as usize) as f64 * 0.3).sin()]).unwrap()).collect();
                let mut acc = 0.0;
                let y: Vec<Vector> = u
                    .iter()
                    .map(|v| {
                        acc = 0.8 * acc + 0.2 * v[0];
                        Vector::new(vec![acc]).unwrap()
                    })
                    .collect();
                Sequence::new(format!("s{e}"), u, y).unwrap()
            })
            .collect()
    }

    fn stable_init() -> NetworkParams {
        let mut np = init_params(&Architecture::new(1, vec![3], 1).unwrap(), 4).unwrap();
        let flat: Vec<f64> = np.flatten().iter().map(|v| 0.3 * v).collect();
        np.assign_flat(&flat).unwrap();
        assert!(network_condition(&np, &[1.0]).unwrap().verdict);
        np
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { kappa_max: 50, kappa_val: 25, p_val: 20, ..TrainConfig::protocol(1e-2, 1) }
    }

    #[test]
    fn schedule_has_two_checks() {
        let np = stable_init();
        let out = train(&np, &toy_data(0), &toy_data(7), &small_cfg(), &[1.0]).unwrap();
        assert_eq!(out.history.len(), 2);
        assert_eq!(out.iterations_run, 50);
        assert_eq!(out.stop_reason, StopReason::MaxIterations);
        assert!(out.iss_verdict);
        let csv = history_csv(&out.history);
        assert!(csv.starts_with("iteration,train_loss,val_mse,cond_1\n25,"));
    }

    #[test]
    fn patience_stops_early() {
        let np = stable_init();
        let cfg = TrainConfig { kappa_max: 400, kappa_val: 1, p_val: 0, eta: 0.05, ..small_cfg() };
        let out = train(&np, &toy_data(0), &toy_data(7), &cfg, &[1.0]).unwrap();
        assert_eq!(out.stop_reason, StopReason::Patience);
        assert!(out.iterations_run < 400);
    }

    #[test]
    fn unstable_everywhere_reports_no_checkpoint() {
        let mut np = init_params(&Architecture::new(1, vec![2], 1).unwrap(), 4).unwrap();
        for v in np.layers[0].cell.r.data_mut() {
            *v = 50.0;
        }
        let cfg = TrainConfig { rho: 0.0, eta: 1e-6, ..small_cfg() };
        match train(&np, &toy_data(0), &toy_data(7), &cfg, &[1.0]) {
            Err(TrainError::NoStableCheckpoint { history, .. }) => assert_eq!(history.len(), 2),
            other => panic!("expected NoStableCheckpoint, got {other:?}"),
        }
    }
}

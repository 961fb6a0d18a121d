//! Central finite-difference audit of the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bptt::loss_and_gradients;
use super::loss::loss;
use super::{TrainConfig, TrainError, PROTOCOL_RHO};
use crate::data::Sequence;
use crate::iss::{argmax, gate_row_sums, layer_condition, layer_input_bound};
use crate::lstm::{Architecture, NetworkParams};
use crate::numerics::Vector;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Below this magnitude errors are judged in absolute terms.
const MAGNITUDE_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, 1e-3)`. With the 1e-6 tolerance this is the
/// relative test with an absolute floor of 1e-9.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat parameter index of the worst entry.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares every gradient entry with a central difference of step `step`.
pub fn gradient_audit(
    np: &NetworkParams,
    data: &[Sequence],
    cfg: &TrainConfig,
    u_max: &[f64],
    step: f64,
) -> Result<AuditReport, TrainError> {
    let analytic = loss_and_gradients(np, data, cfg, u_max)?.1.flatten();
    let base = np.flatten();
    let mut probe = np.clone();
    let mut eval = |flat: &[f64]| -> Result<f64, TrainError> {
        probe.assign_flat(flat)?;
        loss(&probe, data, cfg, u_max)
    };
    let mut report =
        AuditReport { checked: 0, max_rel_error: 0.0, worst_index: 0, worst_analytic: 0.0, worst_numeric: 0.0 };
    let mut x = base.clone();
    for idx in 0..base.len() {
        x[idx] = base[idx] + step;
        let up = eval(&x)?;
        x[idx] = base[idx] - step;
        let down = eval(&x)?;
        x[idx] = base[idx];
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[idx], numeric);
        report.checked += 1;
        if idx == 0 || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = idx;
            report.worst_analytic = analytic[idx];
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

fn top_two_gap(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    if v.len() < 2 {
        f64::INFINITY
    } else {
        v[0] - v[1]
    }
}

/// True when the penalty is smooth within `gap` of `np`: no hinge kink, no
/// tie between the largest row sums and no zero entry in a maximising row.
pub fn is_generic(np: &NetworkParams, cfg: &TrainConfig, u_max: &[f64], gap: f64) -> Result<bool, TrainError> {
    if cfg.rho == 0.0 {
        return Ok(true);
    }
    for (l, p) in np.layers.iter().enumerate() {
        let ub = layer_input_bound(np, l, u_max);
        let rep = layer_condition(p, &ub)?;
        if (rep.margin + cfg.gamma_margin).abs() < gap {
            return Ok(false);
        }
        let rg_rows = p.cell.r.row_abs_sums();
        let mut rows: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for gp in [&p.forget, &p.input] {
            let sums = gate_row_sums(gp, &ub);
            let r = argmax(&sums);
            let entries = gp.w.row(r).iter().chain(gp.r.row(r)).copied().chain([gp.b[r]]).collect();
            rows.push((sums, entries));
        }
        let r = argmax(&rg_rows);
        rows.push((rg_rows.clone(), p.cell.r.row(r).to_vec()));
        for (sums, entries) in rows {
            if top_two_gap(&sums) < gap || entries.iter().any(|v| v.abs() < gap) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Network with every parameter uniform in `[-scale, scale]`.
pub fn random_network<R: Rng>(arch: &Architecture, rng: &mut R, scale: f64) -> Result<NetworkParams, TrainError> {
    let mut np = NetworkParams::zeros(arch)?;
    let flat: Vec<f64> = (0..np.param_count()).map(|_| rng.random_range(-scale..=scale)).collect();
    np.assign_flat(&flat)?;
    Ok(np)
}

/// Draws random networks until one is generic for `cfg` (gap 1e-4).
pub fn generic_network<R: Rng>(
    arch: &Architecture,
    rng: &mut R,
    scale: f64,
    cfg: &TrainConfig,
    u_max: &[f64],
) -> Result<NetworkParams, TrainError> {
    loop {
        let np = random_network(arch, rng, scale)?;
        if is_generic(&np, cfg, u_max, 1e-4)? {
            return Ok(np);
        }
    }
}

/// One audited network of [`standard_audit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCase {
    pub rho: f64,
    pub trial: usize,
    pub report: AuditReport,
}

/// Audits `trials` generic networks for each of `ρ = 0` and `ρ = 0.05`:
/// two layers of 3 and 4 units, two inputs and outputs, two random sequences
/// of length 10 with entries in `[-1, 1]`.
pub fn standard_audit(seed: u64, trials: usize) -> Result<Vec<AuditCase>, TrainError> {
    let arch = Architecture::new(2, vec![3, 4], 2)?;
    let u_max = [1.0, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    for rho in [0.0, PROTOCOL_RHO] {
        let cfg = TrainConfig { rho, ..TrainConfig::protocol(1e-3, seed) };
        for trial in 0..trials {
            let np = generic_network(&arch, &mut rng, 0.8, &cfg, &u_max)?;
            let data = (0..2)
                .map(|e| {
                    let mut draw = |n: usize| Vector::from_vec_unchecked((0..n).map(|_| rng.random_range(-1.0..=1.0)).collect());
                    let u: Vec<Vector> = (0..10).map(|_| draw(2)).collect();
                    let y: Vec<Vector> = (0..10).map(|_| draw(2)).collect();
                    Sequence::new(format!("audit{e}"), u, y).map_err(|e| TrainError::Domain(e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let report = gradient_audit(&np, &data, &cfg, &u_max, DEFAULT_STEP)?;
            cases.push(AuditCase { rho, trial, report });
        }
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        // tiny entries are compared in absolute terms
        assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
    }
}

//! Infinity-norm input-to-state stability certificates for LSTM layers.
//!
//! For a layer whose inputs satisfy `|ũ| ≤ ũ_max` componentwise and whose
//! hidden state starts in `(-1, 1)`, every sigmoid gate `j ∈ {f, i, o}` is
//! bounded by
//!
//! ```text
//! σ̄_j = σ(‖[ |W_j|·ũ_max , R_j , b_j ]‖∞)
//! ```
//!
//! and the layer is ISS in the ∞-norm whenever `σ̄_f + σ̄_i‖R_g‖∞ < 1`. The
//! norms of the cell and hidden states then obey the elementwise recursion
//!
//! ```text
//! [‖c_k‖; ‖h_k‖] ≤ A [‖c_{k-1}‖; ‖h_{k-1}‖] + B_u ‖ũ_{k-1}‖ + B_b ‖b_g‖
//! A   = [σ̄_f, σ̄_i‖R_g‖; σ̄_o σ̄_f, σ̄_o σ̄_i‖R_g‖]
//! B_u = [σ̄_i‖W_g‖; σ̄_o σ̄_i‖W_g‖]      B_b = [σ̄_i; σ̄_o σ̄_i]
//! ```
//!
//! whose ∞-norm form gives `β(s, k) = ρ̄^k s`, `γ_u(a) = ‖B_u‖ a / (1 - ρ̄)`
//! and `γ_b(b) = ‖B_b‖ b / (1 - ρ̄)` with `ρ̄ = ‖A‖∞ = σ̄_f + σ̄_i‖R_g‖∞`.
//! A network is certified when every layer is (cascade of ISS systems), with
//! `ũ_max = 1` for every layer after the first since hidden states live in
//! `(-1, 1)`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lstm::{Gate, GateParams, LayerParams, LayerState, NetworkParams};
use crate::numerics::{sigmoid, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IssError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("input bound must be finite and nonnegative")]
    InvalidInputBound,
    #[error("gate {0:?} has no sigmoid bound")]
    NotASigmoidGate(Gate),
    #[error("unstable layer: ρ̄ = {rho_bar} ≥ 1, gain functions undefined")]
    UnstableLayer { rho_bar: f64 },
}

/// Power-iteration limits for the spectral norm.
const POWER_ITERATIONS: usize = 200;
const POWER_TOLERANCE: f64 = 1e-12;

fn check_u_max(p: &LayerParams, u_max: &[f64]) -> Result<(), IssError> {
    if u_max.len() != p.n_in() {
        return Err(IssError::Dimension(format!(
            "input bound of length {} for a layer with {} inputs",
            u_max.len(),
            p.n_in()
        )));
    }
    if u_max.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(IssError::InvalidInputBound);
    }
    Ok(())
}

/// Absolute row sums of `[ |W|·ũ_max , R , b ]`.
pub fn gate_row_sums(p: &GateParams, u_max: &[f64]) -> Vec<f64> {
    (0..p.w.rows())
        .map(|r| {
            let wu: f64 = p.w.row(r).iter().zip(u_max).map(|(w, u)| w.abs() * u).sum();
            let rr: f64 = p.r.row(r).iter().map(|v| v.abs()).sum();
            wu + rr + p.b[r].abs()
        })
        .collect()
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Upper bound `σ̄_j` on every component of sigmoid gate `j`.
pub fn gate_bound(p: &LayerParams, gate: Gate, u_max: &[f64]) -> Result<f64, IssError> {
    if gate == Gate::Cell {
        return Err(IssError::NotASigmoidGate(gate));
    }
    check_u_max(p, u_max)?;
    let sums = gate_row_sums(p.gate(gate), u_max);
    Ok(sigmoid(sums.into_iter().fold(0.0, f64::max)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateBounds {
    pub sigma_f: f64,
    pub sigma_i: f64,
    pub sigma_o: f64,
}

pub fn gate_bounds(p: &LayerParams, u_max: &[f64]) -> Result<GateBounds, IssError> {
    Ok(GateBounds {
        sigma_f: gate_bound(p, Gate::Forget, u_max)?,
        sigma_i: gate_bound(p, Gate::Input, u_max)?,
        sigma_o: gate_bound(p, Gate::Output, u_max)?,
    })
}

/// Largest singular value by power iteration on `MᵀM` from the all-ones vector.
pub fn spectral_norm(m: &Matrix) -> f64 {
    let n = m.cols();
    if n == 0 || m.rows() == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0_f64;
    for _ in 0..POWER_ITERATIONS {
        let mv = m.matvec(&v).expect("dimensions fixed above");
        let mut w = vec![0.0; n];
        m.matvec_t_acc(&mv, &mut w);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - lambda).abs() <= POWER_TOLERANCE * norm;
        lambda = norm;
        v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / norm);
        if converged {
            break;
        }
    }
    lambda.sqrt()
}

/// Stability summary of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssLayerReport {
    pub bounds: GateBounds,
    pub rg_inf_norm: f64,
    pub rg_two_norm: f64,
    /// `σ̄_f + σ̄_i‖R_g‖∞`.
    pub condition_value: f64,
    /// `condition_value - 1`; negative when the condition holds.
    pub margin: f64,
    /// `σ̄_f + σ̄_o σ̄_i ‖R_g‖₂`.
    pub iss2_value: f64,
    pub satisfied_inf: bool,
    pub satisfied_2: bool,
}

pub fn layer_condition(p: &LayerParams, u_max: &[f64]) -> Result<IssLayerReport, IssError> {
    p.validate().map_err(|e| IssError::Dimension(e.to_string()))?;
    let bounds = gate_bounds(p, u_max)?;
    let rg_inf_norm = p.cell.r.row_abs_sums().into_iter().fold(0.0, f64::max);
    let rg_two_norm = spectral_norm(&p.cell.r);
    let condition_value = bounds.sigma_f + bounds.sigma_i * rg_inf_norm;
    let iss2_value = bounds.sigma_f + bounds.sigma_o * bounds.sigma_i * rg_two_norm;
    Ok(IssLayerReport {
        bounds,
        rg_inf_norm,
        rg_two_norm,
        condition_value,
        margin: condition_value - 1.0,
        iss2_value,
        satisfied_inf: condition_value < 1.0,
        satisfied_2: iss2_value < 1.0,
    })
}

/// Per-layer reports plus the cascade verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssReport {
    pub layers: Vec<IssLayerReport>,
    /// True iff every layer satisfies the ∞-norm condition.
    pub verdict: bool,
}

/// Input bound of layer `l` (0-based): `u_max` for the first layer, ones after.
pub fn layer_input_bound(np: &NetworkParams, layer: usize, u_max: &[f64]) -> Vec<f64> {
    if layer == 0 {
        u_max.to_vec()
    } else {
        vec![1.0; np.layers[layer].n_in()]
    }
}

pub fn network_condition(np: &NetworkParams, u_max: &[f64]) -> Result<IssReport, IssError> {
    let layers = (0..np.layers.len())
        .map(|l| layer_condition(&np.layers[l], &layer_input_bound(np, l, u_max)))
        .collect::<Result<Vec<_>, _>>()?;
    let verdict = layers.iter().all(|r| r.satisfied_inf);
    Ok(IssReport { layers, verdict })
}

impl fmt::Display for IssReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layer  sigma_f   sigma_i   sigma_o   |R_g|inf   cond_inf  margin     cond_2    inf  2")?;
        for (l, r) in self.layers.iter().enumerate() {
            writeln!(
                f,
                "{:>5}  {:.6}  {:.6}  {:.6}  {:>9.6}  {:.6}  {:>+9.6}  {:>8.6}  {}  {}",
                l + 1,
                r.bounds.sigma_f,
                r.bounds.sigma_i,
                r.bounds.sigma_o,
                r.rg_inf_norm,
                r.condition_value,
                r.margin,
                r.iss2_value,
                if r.satisfied_inf { "ok" } else { "--" },
                if r.satisfied_2 { "ok" } else { "--" },
            )?;
        }
        write!(f, "verdict: {}", if self.verdict { "PASS" } else { "FAIL" })
    }
}

/// Coefficients of the bound recursion and of the β/γ functions of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IssEnvelope {
    pub bounds: GateBounds,
    pub rg_inf: f64,
    pub wg_inf: f64,
    /// `σ̄_f + σ̄_i‖R_g‖∞`.
    pub rho_bar: f64,
    pub bu_inf: f64,
    pub bb_inf: f64,
    pub bg_inf: f64,
}

impl IssEnvelope {
    /// Assembles the coefficients without requiring stability.
    pub fn from_parts(bounds: GateBounds, wg_inf: f64, rg_inf: f64, bg_inf: f64) -> Self {
        let [bu0, bu1] = [bounds.sigma_i * wg_inf, bounds.sigma_o * bounds.sigma_i * wg_inf];
        let [bb0, bb1] = [bounds.sigma_i, bounds.sigma_o * bounds.sigma_i];
        Self {
            bounds,
            rg_inf,
            wg_inf,
            rho_bar: bounds.sigma_f + bounds.sigma_i * rg_inf,
            bu_inf: bu0.max(bu1),
            bb_inf: bb0.max(bb1),
            bg_inf,
        }
    }

    pub fn for_layer(p: &LayerParams, u_max: &[f64]) -> Result<Self, IssError> {
        let bounds = gate_bounds(p, u_max)?;
        let inf = |m: &Matrix| m.row_abs_sums().into_iter().fold(0.0, f64::max);
        let bg_inf = p.cell.b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(Self::from_parts(bounds, inf(&p.cell.w), inf(&p.cell.r), bg_inf))
    }

    pub fn a(&self) -> [[f64; 2]; 2] {
        let b = &self.bounds;
        [
            [b.sigma_f, b.sigma_i * self.rg_inf],
            [b.sigma_o * b.sigma_f, b.sigma_o * b.sigma_i * self.rg_inf],
        ]
    }

    pub fn a_matrix(&self) -> Matrix {
        let a = self.a();
        Matrix::from_rows(&[a[0].to_vec(), a[1].to_vec()]).expect("finite 2x2")
    }

    pub fn b_u(&self) -> [f64; 2] {
        [self.bounds.sigma_i * self.wg_inf, self.bounds.sigma_o * self.bounds.sigma_i * self.wg_inf]
    }

    pub fn b_b(&self) -> [f64; 2] {
        [self.bounds.sigma_i, self.bounds.sigma_o * self.bounds.sigma_i]
    }

    pub fn is_stable(&self) -> bool {
        self.rho_bar < 1.0
    }

    fn gain_denominator(&self) -> Result<f64, IssError> {
        if self.is_stable() {
            Ok(1.0 - self.rho_bar)
        } else {
            Err(IssError::UnstableLayer { rho_bar: self.rho_bar })
        }
    }

    /// `β(s, k) = ρ̄^k · s`.
    pub fn beta(&self, x0_inf: f64, k: usize) -> f64 {
        self.rho_bar.powi(k as i32) * x0_inf
    }

    /// `γ_u(a) = ‖B_u‖∞ a / (1 - ρ̄)`.
    pub fn gamma_u(&self, u_sup_inf: f64) -> Result<f64, IssError> {
        Ok(self.bu_inf * u_sup_inf / self.gain_denominator()?)
    }

    /// `γ_b(b) = ‖B_b‖∞ b / (1 - ρ̄)`.
    pub fn gamma_b(&self, bg_inf: f64) -> Result<f64, IssError> {
        Ok(self.bb_inf * bg_inf / self.gain_denominator()?)
    }

    /// `β(‖x0‖, k) + γ_u(u_sup) + γ_b(‖b_g‖)` for this layer's own `b_g`.
    pub fn iss_bound(&self, x0_inf: f64, k: usize, u_sup_inf: f64) -> Result<f64, IssError> {
        Ok(self.beta(x0_inf, k) + self.gamma_u(u_sup_inf)? + self.gamma_b(self.bg_inf)?)
    }
}

/// Envelope coefficients of a layer; fails for layers violating the condition.
pub fn envelope(p: &LayerParams, u_max: &[f64]) -> Result<IssEnvelope, IssError> {
    let env = IssEnvelope::for_layer(p, u_max)?;
    env.gain_denominator()?;
    Ok(env)
}

/// Elementwise upper envelope `e_k ≥ [‖c_k‖∞; ‖h_k‖∞]`, `k = 0..=horizon`,
/// from the 2x2 recursion evaluated with equality. `input_norms[k]` is
/// `‖ũ_k‖∞`.
pub fn bound_trajectory(
    p: &LayerParams,
    u_max: &[f64],
    x0: &LayerState,
    input_norms: &[f64],
    horizon: usize,
) -> Result<Vec<[f64; 2]>, IssError> {
    if input_norms.len() < horizon {
        return Err(IssError::Dimension(format!("{} input norms for horizon {horizon}", input_norms.len())));
    }
    let env = IssEnvelope::for_layer(p, u_max)?;
    let (a, bu, bb) = (env.a(), env.b_u(), env.b_b());
    let norm = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut e = [norm(&x0.c), norm(&x0.h)];
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(e);
    for &un in &input_norms[..horizon] {
        e = [
            a[0][0] * e[0] + a[0][1] * e[1] + bu[0] * un + bb[0] * env.bg_inf,
            a[1][0] * e[0] + a[1][1] * e[1] + bu[1] * un + bb[1] * env.bg_inf,
        ];
        out.push(e);
    }
    Ok(out)
}

/// Scalar ∞-norm bound `s_k ≥ ‖x_k‖∞` from `s_k = ρ̄ s_{k-1} + ‖B_u‖ ‖ũ_{k-1}‖ + ‖B_b‖ ‖b_g‖`.
pub fn scalar_bound_trajectory(
    p: &LayerParams,
    u_max: &[f64],
    x0: &LayerState,
    input_norms: &[f64],
    horizon: usize,
) -> Result<Vec<f64>, IssError> {
    if input_norms.len() < horizon {
        return Err(IssError::Dimension(format!("{} input norms for horizon {horizon}", input_norms.len())));
    }
    let env = IssEnvelope::for_layer(p, u_max)?;
    let mut s = x0.inf_norm();
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(s);
    for &un in &input_norms[..horizon] {
        s = env.rho_bar * s + env.bu_inf * un + env.bb_inf * env.bg_inf;
        out.push(s);
    }
    Ok(out)
}

/// Random layer satisfying `condition_value ≤ 1 - margin`: entries uniform in
/// `[-scale, scale]`, rejected while `σ̄_f` alone leaves no room, then `R_g`
/// shrunk until the condition holds.
pub fn sample_stable_layer<R: Rng>(
    rng: &mut R,
    n_in: usize,
    n_hu: usize,
    u_max: &[f64],
    scale: f64,
    margin: f64,
) -> LayerParams {
    assert_eq!(u_max.len(), n_in);
    loop {
        let mut p = LayerParams::zeros(n_in, n_hu);
        for g in Gate::ALL {
            let gp = p.gate_mut(g);
            for v in gp.w.data_mut().iter_mut().chain(gp.r.data_mut()).chain(gp.b.as_mut_slice()) {
                *v = rng.random_range(-scale..=scale);
            }
        }
        let sf = gate_bound(&p, Gate::Forget, u_max).unwrap();
        let si = gate_bound(&p, Gate::Input, u_max).unwrap();
        let room = 1.0 - margin - sf;
        if room <= 0.0 {
            continue;
        }
        let rg = p.cell.r.row_abs_sums().into_iter().fold(0.0, f64::max);
        if si * rg > room {
            // shrink a little past the boundary so rounding cannot undo it
            let factor = 0.999 * room / (si * rg);
            p.cell.r.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
        let report = layer_condition(&p, u_max).unwrap();
        if report.condition_value <= 1.0 - margin {
            return p;
        }
    }
}

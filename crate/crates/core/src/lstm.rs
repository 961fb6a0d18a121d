//! Multi-layer LSTM written as a discrete-time state-space model.
//!
//! Each layer carries a cell state `c` and a hidden state `h`. One step of
//! layer `l` reads its input `ũ` (the plant input for the first layer, the
//! freshly updated hidden state of layer `l-1` otherwise):
//!
//! ```text
//! f = σ(W_f ũ + R_f h + b_f)      i = σ(W_i ũ + R_i h + b_i)
//! o = σ(W_o ũ + R_o h + b_o)      g = tanh(W_g ũ + R_g h + b_g)
//! c⁺ = f∘c + i∘g                  h⁺ = o∘tanh(c⁺)
//! ```
//!
//! and the network output is the affine readout `y = W_y h⁺ + b_y` of the
//! last layer's updated hidden state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{sigmoid, Matrix, NumericsError, Vector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LstmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("invalid initialisation: {0}")]
    Init(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

fn dim_err(msg: impl Into<String>) -> LstmError {
    LstmError::Dimension(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gate {
    Forget,
    Input,
    Output,
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Forget, Gate::Input, Gate::Output, Gate::Cell];

    pub fn symbol(self) -> &'static str {
        match self {
            Gate::Forget => "f",
            Gate::Input => "i",
            Gate::Output => "o",
            Gate::Cell => "g",
        }
    }
}

/// Input weights, recurrent weights and bias of one gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub w: Matrix,
    pub r: Matrix,
    pub b: Vector,
}

impl GateParams {
    pub fn zeros(n_in: usize, n_hu: usize) -> Self {
        Self { w: Matrix::zeros(n_hu, n_in), r: Matrix::zeros(n_hu, n_hu), b: Vector::zeros(n_hu) }
    }

    fn check(&self, n_in: usize, n_hu: usize, name: &str) -> Result<(), LstmError> {
        if self.w.shape() != (n_hu, n_in) {
            return Err(dim_err(format!("W_{name} is {:?}, expected ({n_hu}, {n_in})", self.w.shape())));
        }
        if self.r.shape() != (n_hu, n_hu) {
            return Err(dim_err(format!("R_{name} is {:?}, expected ({n_hu}, {n_hu})", self.r.shape())));
        }
        if self.b.len() != n_hu {
            return Err(dim_err(format!("b_{name} has length {}, expected {n_hu}", self.b.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub forget: GateParams,
    pub input: GateParams,
    pub output: GateParams,
    pub cell: GateParams,
}

impl LayerParams {
    pub fn zeros(n_in: usize, n_hu: usize) -> Self {
        Self {
            forget: GateParams::zeros(n_in, n_hu),
            input: GateParams::zeros(n_in, n_hu),
            output: GateParams::zeros(n_in, n_hu),
            cell: GateParams::zeros(n_in, n_hu),
        }
    }

    pub fn n_in(&self) -> usize {
        self.forget.w.cols()
    }

    pub fn n_hu(&self) -> usize {
        self.forget.w.rows()
    }

    pub fn gate(&self, gate: Gate) -> &GateParams {
        match gate {
            Gate::Forget => &self.forget,
            Gate::Input => &self.input,
            Gate::Output => &self.output,
            Gate::Cell => &self.cell,
        }
    }

    pub fn gate_mut(&mut self, gate: Gate) -> &mut GateParams {
        match gate {
            Gate::Forget => &mut self.forget,
            Gate::Input => &mut self.input,
            Gate::Output => &mut self.output,
            Gate::Cell => &mut self.cell,
        }
    }

    pub fn validate(&self) -> Result<(), LstmError> {
        let (n_in, n_hu) = (self.n_in(), self.n_hu());
        if n_hu == 0 || n_in == 0 {
            return Err(LstmError::Architecture("zero-sized layer".into()));
        }
        for g in Gate::ALL {
            self.gate(g).check(n_in, n_hu, g.symbol())?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        4 * self.n_hu() * (self.n_in() + self.n_hu() + 1)
    }
}

/// Layer sizes of a network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_u: usize,
    pub hidden: Vec<usize>,
    pub n_y: usize,
}

impl Architecture {
    pub fn new(n_u: usize, hidden: Vec<usize>, n_y: usize) -> Result<Self, LstmError> {
        let arch = Self { n_u, hidden, n_y };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<(), LstmError> {
        if self.hidden.is_empty() {
            return Err(LstmError::Architecture("at least one layer is required".into()));
        }
        if self.n_u == 0 || self.n_y == 0 || self.hidden.contains(&0) {
            return Err(LstmError::Architecture(format!("zero-sized layer in {self:?}")));
        }
        Ok(())
    }

    pub fn layer_inputs(&self, layer: usize) -> usize {
        if layer == 0 {
            self.n_u
        } else {
            self.hidden[layer - 1]
        }
    }

    pub fn param_count(&self) -> usize {
        let layers: usize = (0..self.hidden.len())
            .map(|l| 4 * self.hidden[l] * (self.layer_inputs(l) + self.hidden[l] + 1))
            .sum();
        layers + self.n_y * (self.hidden[self.hidden.len() - 1] + 1)
    }

    /// Total state dimension `2·Σ n_hu`.
    pub fn state_dim(&self) -> usize {
        2 * self.hidden.iter().sum::<usize>()
    }
}

/// All trainable parameters: stacked layers and the affine readout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    pub w_y: Matrix,
    pub b_y: Vector,
}

impl NetworkParams {
    pub fn new(layers: Vec<LayerParams>, w_y: Matrix, b_y: Vector) -> Result<Self, LstmError> {
        let np = Self { layers, w_y, b_y };
        np.validate()?;
        Ok(np)
    }

    pub fn zeros(arch: &Architecture) -> Result<Self, LstmError> {
        arch.validate()?;
        let layers = (0..arch.hidden.len())
            .map(|l| LayerParams::zeros(arch.layer_inputs(l), arch.hidden[l]))
            .collect();
        let last = *arch.hidden.last().unwrap();
        Ok(Self { layers, w_y: Matrix::zeros(arch.n_y, last), b_y: Vector::zeros(arch.n_y) })
    }

    pub fn validate(&self) -> Result<(), LstmError> {
        if self.layers.is_empty() {
            return Err(LstmError::Architecture("at least one layer is required".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if l > 0 && layer.n_in() != self.layers[l - 1].n_hu() {
                return Err(dim_err(format!(
                    "layer {} expects {} inputs but layer {} has {} hidden units",
                    l + 1,
                    layer.n_in(),
                    l,
                    self.layers[l - 1].n_hu()
                )));
            }
        }
        let last = self.layers.last().unwrap().n_hu();
        if self.w_y.cols() != last || self.w_y.rows() != self.b_y.len() || self.b_y.is_empty() {
            return Err(dim_err(format!(
                "readout W_y {:?} / b_y {} incompatible with {last} hidden units",
                self.w_y.shape(),
                self.b_y.len()
            )));
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            n_u: self.layers[0].n_in(),
            hidden: self.layers.iter().map(LayerParams::n_hu).collect(),
            n_y: self.w_y.rows(),
        }
    }

    pub fn n_u(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_y(&self) -> usize {
        self.w_y.rows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::param_count).sum::<usize>() + self.w_y.rows() * (self.w_y.cols() + 1)
    }

    /// Parameters in a fixed order: per layer, per gate (f, i, o, g): W, R, b;
    /// then W_y and b_y.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for g in Gate::ALL {
                let p = layer.gate(g);
                out.extend_from_slice(p.w.data());
                out.extend_from_slice(p.r.data());
                out.extend_from_slice(&p.b);
            }
        }
        out.extend_from_slice(self.w_y.data());
        out.extend_from_slice(&self.b_y);
        out
    }

    /// Overwrites every parameter from `flat` (same order as [`flatten`](Self::flatten)).
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<(), LstmError> {
        if flat.len() != self.param_count() {
            return Err(dim_err(format!("{} values for {} parameters", flat.len(), self.param_count())));
        }
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite(i).into());
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for layer in &mut self.layers {
            for g in Gate::ALL {
                let p = layer.gate_mut(g);
                take(p.w.data_mut());
                take(p.r.data_mut());
                take(p.b.as_mut_slice());
            }
        }
        take(self.w_y.data_mut());
        take(self.b_y.as_mut_slice());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub c: Vector,
    pub h: Vector,
}

impl LayerState {
    pub fn zeros(n_hu: usize) -> Self {
        Self { c: Vector::zeros(n_hu), h: Vector::zeros(n_hu) }
    }

    /// `‖[c; h]‖∞`.
    pub fn inf_norm(&self) -> f64 {
        self.c.iter().chain(self.h.iter()).fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub layers: Vec<LayerState>,
}

impl NetworkState {
    /// The default initial state: zero cell and hidden states everywhere.
    pub fn zeros(np: &NetworkParams) -> Self {
        Self { layers: np.layers.iter().map(|l| LayerState::zeros(l.n_hu())).collect() }
    }

    /// Checks dimensions against `np` and that every hidden component is in (-1, 1).
    pub fn validate(&self, np: &NetworkParams) -> Result<(), LstmError> {
        if self.layers.len() != np.layers.len() {
            return Err(dim_err(format!("state has {} layers, network {}", self.layers.len(), np.layers.len())));
        }
        for (l, (s, p)) in self.layers.iter().zip(&np.layers).enumerate() {
            if s.c.len() != p.n_hu() || s.h.len() != p.n_hu() {
                return Err(dim_err(format!("layer {} state size mismatch", l + 1)));
            }
            if s.h.iter().any(|v| v.abs() >= 1.0) {
                return Err(dim_err(format!("layer {} hidden state outside (-1, 1)", l + 1)));
            }
        }
        Ok(())
    }

    pub fn inf_norm(&self) -> f64 {
        self.layers.iter().map(LayerState::inf_norm).fold(0.0, f64::max)
    }
}

/// Gate activations of one layer step, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct GateValues {
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    /// `tanh(c⁺)`.
    pub tanh_c: Vec<f64>,
}

/// One step of a layer without dimension checks. Writes the new state into
/// `c_next`/`h_next` and the activations into `gates`.
#[inline]
pub(crate) fn layer_step_into(
    p: &LayerParams,
    c: &[f64],
    h: &[f64],
    u: &[f64],
    gates: &mut GateValues,
    c_next: &mut [f64],
    h_next: &mut [f64],
) {
    for (gate, out) in [
        (&p.forget, &mut gates.f),
        (&p.input, &mut gates.i),
        (&p.output, &mut gates.o),
        (&p.cell, &mut gates.g),
    ] {
        out.copy_from_slice(&gate.b);
        gate.w.matvec_acc(u, out);
        gate.r.matvec_acc(h, out);
    }
    for v in gates.f.iter_mut().chain(gates.i.iter_mut()).chain(gates.o.iter_mut()) {
        *v = sigmoid(*v);
    }
    for v in gates.g.iter_mut() {
        *v = v.tanh();
    }
    for k in 0..c.len() {
        let cn = gates.f[k] * c[k] + gates.i[k] * gates.g[k];
        let tc = cn.tanh();
        c_next[k] = cn;
        gates.tanh_c[k] = tc;
        h_next[k] = gates.o[k] * tc;
    }
}

impl GateValues {
    pub(crate) fn zeros(n: usize) -> Self {
        Self { f: vec![0.0; n], i: vec![0.0; n], o: vec![0.0; n], g: vec![0.0; n], tanh_c: vec![0.0; n] }
    }
}

/// Advances one layer by one step.
pub fn layer_step(p: &LayerParams, s: &LayerState, u: &[f64]) -> Result<(LayerState, GateValues), LstmError> {
    p.validate()?;
    let n = p.n_hu();
    if s.c.len() != n || s.h.len() != n {
        return Err(dim_err(format!("state of size ({}, {}) for a {n}-unit layer", s.c.len(), s.h.len())));
    }
    if u.len() != p.n_in() {
        return Err(dim_err(format!("input of length {} for a layer with {} inputs", u.len(), p.n_in())));
    }
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite(i).into());
    }
    let mut gates = GateValues::zeros(n);
    let mut c = vec![0.0; n];
    let mut h = vec![0.0; n];
    layer_step_into(p, &s.c, &s.h, u, &mut gates, &mut c, &mut h);
    Ok((LayerState { c: Vector::from_vec_unchecked(c), h: Vector::from_vec_unchecked(h) }, gates))
}

fn readout(np: &NetworkParams, h_last: &[f64]) -> Vector {
    let mut y = np.b_y.to_vec();
    np.w_y.matvec_acc(h_last, &mut y);
    Vector::from_vec_unchecked(y)
}

/// Advances the whole network by one step and returns the new state and output.
pub fn network_step(np: &NetworkParams, ns: &NetworkState, u: &[f64]) -> Result<(NetworkState, Vector), LstmError> {
    np.validate()?;
    if ns.layers.len() != np.layers.len() {
        return Err(dim_err("state/network layer count mismatch"));
    }
    if u.len() != np.n_u() {
        return Err(dim_err(format!("input of length {}, network expects {}", u.len(), np.n_u())));
    }
    let mut next: Vec<LayerState> = Vec::with_capacity(np.layers.len());
    for (l, (p, s)) in np.layers.iter().zip(&ns.layers).enumerate() {
        let (state, _) = match l {
            0 => layer_step(p, s, u)?,
            _ => layer_step(p, s, &next[l - 1].h)?,
        };
        next.push(state);
    }
    let y = readout(np, &next.last().unwrap().h);
    Ok((NetworkState { layers: next }, y))
}

/// Free-run simulation result.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// `outputs[k]` is the model output at step `k`.
    pub outputs: Vec<Vector>,
    /// `states[k]` is the state reached after consuming `inputs[k]`, i.e. `x_{k+1}`.
    pub states: Vec<NetworkState>,
}

/// Simulates the network from `x0` over an input sequence, with no output feedback.
pub fn simulate(np: &NetworkParams, x0: &NetworkState, inputs: &[Vector]) -> Result<Simulation, LstmError> {
    np.validate()?;
    x0.validate(np)?;
    if let Some(k) = inputs.iter().position(|u| u.len() != np.n_u()) {
        return Err(dim_err(format!(
            "input at step {k} has {} channels, network expects {}",
            inputs[k].len(),
            np.n_u()
        )));
    }
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut states = Vec::with_capacity(inputs.len());
    let mut cur = x0.clone();
    let mut gates: Vec<GateValues> = np.layers.iter().map(|p| GateValues::zeros(p.n_hu())).collect();
    for u in inputs {
        let mut next: Vec<LayerState> = Vec::with_capacity(np.layers.len());
        for (l, p) in np.layers.iter().enumerate() {
            let n = p.n_hu();
            let mut c = vec![0.0; n];
            let mut h = vec![0.0; n];
            let input: &[f64] = if l == 0 { u } else { &next[l - 1].h };
            layer_step_into(p, &cur.layers[l].c, &cur.layers[l].h, input, &mut gates[l], &mut c, &mut h);
            next.push(LayerState { c: Vector::from_vec_unchecked(c), h: Vector::from_vec_unchecked(h) });
        }
        outputs.push(readout(np, &next.last().unwrap().h));
        cur = NetworkState { layers: next };
        states.push(cur.clone());
    }
    Ok(Simulation { outputs, states })
}

/// Outputs only, from the zero initial state. Used by losses and metrics.
pub fn predict(np: &NetworkParams, inputs: &[Vector]) -> Result<Vec<Vector>, LstmError> {
    Ok(simulate(np, &NetworkState::zeros(np), inputs)?.outputs)
}

/// Uniform `[-r, r]` weights with `r = 1/√fan_in` (fan-in = column count of
/// each matrix), zero biases. Deterministic in `seed`.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<NetworkParams, LstmError> {
    init_params_scaled(arch, seed, 1.0)
}

/// [`init_params`] with `r = scale/√fan_in`. Small scales start inside the
/// stability region.
pub fn init_params_scaled(arch: &Architecture, seed: u64, scale: f64) -> Result<NetworkParams, LstmError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(LstmError::Init(format!("scale {scale} must be positive")));
    }
    let mut np = NetworkParams::zeros(arch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |m: &mut Matrix| {
        let r = scale / (m.cols() as f64).sqrt();
        for v in m.data_mut() {
            *v = rng.random_range(-r..=r);
        }
    };
    for layer in &mut np.layers {
        for g in Gate::ALL {
            let p = layer.gate_mut(g);
            fill(&mut p.w);
            fill(&mut p.r);
        }
    }
    fill(&mut np.w_y);
    Ok(np)
}

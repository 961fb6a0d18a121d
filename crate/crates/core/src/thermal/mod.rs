//! Discrete-time grey-box model of a two-zone, twelve-sensor shrink tunnel.
//!
//! State (38): filtered zone heat flows `q_f` (2), circuit temperatures `T`
//! (12), pack disturbance `δT_p` (12) and fan disturbance `δT_f` (12).
//! Inputs: four PWM duty cycles `w`, grid voltage `V_g`, pack sensor `d_p`
//! and fan frequency `d_f`. One step of length `T_s`:
//!
//! ```text
//! q_f⁺  = Ã_qq q_f + B̃_q V_g² w
//! T⁺    = Ã_TT T + B̃_qT q_f + b̃_T T_a
//! δT_p⁺ = Ã_pp δT_p + b̃_p d_p
//! δT_f⁺ = Ã_ff δT_f + b̃_f d_f
//! y     = T + δT_p + δT_f
//! ```
//!
//! The diagonal filters are discretised exactly; the circuit block uses a
//! zero-order hold with `q_f` and `T_a` held over the interval. The model is
//! linear in `u_V = (V_g² w, T_a, d_p, d_f)`.

mod benchmark;
mod signals;
mod template;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{zoh, Matrix, NumericsError, Vector};

pub use benchmark::{make_benchmark, make_benchmark_with, simulate_plant, BenchmarkOptions, BENCHMARK_LAYOUT};
pub use signals::{gen_signals, gen_signals_with, Lfsr, SignalKind, SignalOptions};
pub use template::{default_params, ThermalTemplate};

pub const N_SENSORS: usize = 12;
pub const N_ZONES: usize = 2;
pub const N_HEATERS: usize = 4;
pub const N_STATES: usize = N_ZONES + 3 * N_SENSORS;
pub const SAMPLE_TIME_S: f64 = 30.0;
pub const FAN_MIN_HZ: f64 = 40.0;
pub const FAN_MAX_HZ: f64 = 60.0;

/// Heater wiring: each zone has two resistors on the solid-state relay and
/// one on the electromechanical relay.
pub const HEATER_WIRING: [[f64; N_HEATERS]; N_ZONES] = [[2.0, 1.0, 0.0, 0.0], [0.0, 0.0, 2.0, 1.0]];

#[derive(Debug, Error)]
pub enum ThermalError {
    #[error("invalid thermal parameters: {0}")]
    Params(String),
    #[error("thermal circuit matrix is not Hurwitz: largest eigenvalue real part {max_real:e}")]
    NotHurwitz { max_real: f64 },
    #[error("invalid plant input: {0}")]
    Input(String),
    #[error("invalid signal request: {0}")]
    Signal(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Continuous-time parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    /// 12x12, 1/s.
    pub a_tt: Matrix,
    /// 12x2, K/J.
    pub b_qt: Matrix,
    /// 1/s.
    pub b_t: Vector,
    /// Ω.
    pub r_heat: f64,
    /// s.
    pub tau_q: Vec<f64>,
    pub tau_p: Vec<f64>,
    /// °C.
    pub mu_p: Vec<f64>,
    pub tau_f: Vec<f64>,
    /// °C/Hz.
    pub mu_f: Vec<f64>,
    pub t_s: f64,
    /// Constant ambient temperature, °C.
    pub t_a: f64,
}

fn positive(name: &str, values: &[f64]) -> Result<(), ThermalError> {
    if values.iter().all(|v| *v > 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(ThermalError::Params(format!("{name} must be positive and finite")))
    }
}

fn sized(name: &str, len: usize, expected: usize) -> Result<(), ThermalError> {
    if len == expected {
        Ok(())
    } else {
        Err(ThermalError::Params(format!("{name} has {len} entries, expected {expected}")))
    }
}

impl ThermalParams {
    pub fn validate(&self) -> Result<(), ThermalError> {
        if self.a_tt.shape() != (N_SENSORS, N_SENSORS) || self.b_qt.shape() != (N_SENSORS, N_ZONES) {
            return Err(ThermalError::Params("a_tt must be 12x12 and b_qt 12x2".into()));
        }
        sized("b_t", self.b_t.len(), N_SENSORS)?;
        sized("tau_q", self.tau_q.len(), N_ZONES)?;
        for (name, v) in [("tau_p", &self.tau_p), ("mu_p", &self.mu_p), ("tau_f", &self.tau_f), ("mu_f", &self.mu_f)] {
            sized(name, v.len(), N_SENSORS)?;
        }
        positive("r_heat", &[self.r_heat])?;
        positive("t_s", &[self.t_s])?;
        positive("tau_q", &self.tau_q)?;
        positive("tau_p", &self.tau_p)?;
        positive("tau_f", &self.tau_f)?;
        if !self.t_a.is_finite() || self.mu_p.iter().chain(&self.mu_f).any(|v| !v.is_finite()) {
            return Err(ThermalError::Params("gains and ambient temperature must be finite".into()));
        }
        Ok(())
    }

    /// Largest real part among the eigenvalues of `A_TT`.
    pub fn max_real_eigenvalue(&self) -> f64 {
        eigenvalues(&self.a_tt).into_iter().map(|(re, _)| re).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Steady zone heat flows `(2 V₁² + V₂²) / R_heat` for a held input.
    pub fn steady_heat_flow(&self, u: &PlantInput) -> [f64; N_ZONES] {
        let v2 = u.v_g * u.v_g;
        std::array::from_fn(|z| (0..N_HEATERS).map(|h| HEATER_WIRING[z][h] * v2 * u.w[h]).sum::<f64>() / self.r_heat)
    }
}

/// Eigenvalues `(re, im)` of a square matrix.
pub fn eigenvalues(m: &Matrix) -> Vec<(f64, f64)> {
    let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    dm.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect()
}

pub fn spectral_radius(m: &Matrix) -> f64 {
    eigenvalues(m).into_iter().map(|(re, im)| re.hypot(im)).fold(0.0, f64::max)
}

/// One sample of the seven plant inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantInput {
    /// Duty cycles `w_1^(1), w_1^(2), w_2^(1), w_2^(2)`.
    pub w: [f64; N_HEATERS],
    /// Grid voltage, V.
    pub v_g: f64,
    /// Pack sensor, 0 or 1.
    pub d_p: f64,
    /// Fan frequency, Hz.
    pub d_f: f64,
}

impl PlantInput {
    pub fn validate(&self) -> Result<(), ThermalError> {
        if let Some(w) = self.w.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(ThermalError::Input(format!("duty cycle {w} outside [0, 1]")));
        }
        if !(self.v_g > 0.0 && self.v_g.is_finite()) {
            return Err(ThermalError::Input(format!("grid voltage {} must be positive", self.v_g)));
        }
        if self.d_p != 0.0 && self.d_p != 1.0 {
            return Err(ThermalError::Input(format!("pack sensor {} must be 0 or 1", self.d_p)));
        }
        if !(FAN_MIN_HZ..=FAN_MAX_HZ).contains(&self.d_f) {
            return Err(ThermalError::Input(format!("fan frequency {} outside [40, 60] Hz", self.d_f)));
        }
        Ok(())
    }

    /// `[w_1, .., w_4, V_g, d_p, d_f]`.
    pub fn to_vector(&self) -> Vector {
        let mut v = self.w.to_vec();
        v.extend([self.v_g, self.d_p, self.d_f]);
        Vector::new(v).expect("finite inputs")
    }

    pub fn from_slice(u: &[f64]) -> Result<Self, ThermalError> {
        if u.len() != N_HEATERS + 3 {
            return Err(ThermalError::Input(format!("{} input channels, expected 7", u.len())));
        }
        let p = Self { w: [u[0], u[1], u[2], u[3]], v_g: u[4], d_p: u[5], d_f: u[6] };
        p.validate()?;
        Ok(p)
    }

    /// Transformed input `u_V = (V_g² w, T_a, d_p, d_f)`.
    pub fn linear_input(&self, t_a: f64) -> [f64; 7] {
        let v2 = self.v_g * self.v_g;
        [v2 * self.w[0], v2 * self.w[1], v2 * self.w[2], v2 * self.w[3], t_a, self.d_p, self.d_f]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub q_f: Vector,
    pub t: Vector,
    pub dt_p: Vector,
    pub dt_f: Vector,
}

impl ThermalState {
    pub fn zeros() -> Self {
        Self {
            q_f: Vector::zeros(N_ZONES),
            t: Vector::zeros(N_SENSORS),
            dt_p: Vector::zeros(N_SENSORS),
            dt_f: Vector::zeros(N_SENSORS),
        }
    }

    /// Plant at rest: heaters off, circuit at ambient, no packs, fan
    /// disturbance settled at `d_f0`.
    pub fn cold_start(tp: &ThermalParams, d_f0: f64) -> Self {
        Self {
            q_f: Vector::zeros(N_ZONES),
            t: Vector::filled(N_SENSORS, tp.t_a),
            dt_p: Vector::zeros(N_SENSORS),
            dt_f: Vector::new(tp.mu_f.iter().map(|m| m * d_f0).collect()).expect("finite gains"),
        }
    }

    /// Fixed point for an input held forever.
    pub fn equilibrium(tp: &ThermalParams, u: &PlantInput) -> Result<Self, ThermalError> {
        tp.validate()?;
        u.validate()?;
        let q = tp.steady_heat_flow(u);
        let mut rhs = vec![0.0; N_SENSORS];
        tp.b_qt.matvec_acc(&q, &mut rhs);
        rhs.iter_mut().zip(tp.b_t.iter()).for_each(|(r, b)| *r = -(*r + b * tp.t_a));
        let t = tp.a_tt.solve(&rhs)?;
        Ok(Self {
            q_f: Vector::new(q.to_vec())?,
            t: Vector::new(t)?,
            dt_p: Vector::new(tp.mu_p.iter().map(|m| m * u.d_p).collect())?,
            dt_f: Vector::new(tp.mu_f.iter().map(|m| m * u.d_f).collect())?,
        })
    }

    /// Stacked `[q_f; T; δT_p; δT_f]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.q_f.iter().chain(self.t.iter()).chain(self.dt_p.iter()).chain(self.dt_f.iter()).copied().collect()
    }

    pub fn output(&self) -> Vector {
        Vector::from_vec_unchecked((0..N_SENSORS).map(|i| self.t[i] + self.dt_p[i] + self.dt_f[i]).collect())
    }
}

/// Discrete-time matrices for a sampling time `T_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteThermal {
    /// Diagonal of `Ã_qq`.
    pub a_qq: Vec<f64>,
    /// 2x4.
    pub b_q: Matrix,
    pub a_tt: Matrix,
    /// 12x2.
    pub b_qt: Matrix,
    pub b_t: Vector,
    pub a_pp: Vec<f64>,
    pub b_p: Vec<f64>,
    pub a_ff: Vec<f64>,
    pub b_f: Vec<f64>,
    pub t_a: f64,
}

/// `e^{-T_s/τ}` and the matching unit-DC-gain input weight `1 - e^{-T_s/τ}`.
fn first_order(tau: f64, t_s: f64) -> (f64, f64) {
    let a = (-t_s / tau).exp();
    (a, -(-t_s / tau).exp_m1())
}

pub fn discretize(tp: &ThermalParams) -> Result<DiscreteThermal, ThermalError> {
    tp.validate()?;
    let max_real = tp.max_real_eigenvalue();
    if !(max_real < 0.0) {
        return Err(ThermalError::NotHurwitz { max_real });
    }
    let (a_qq, g_q): (Vec<f64>, Vec<f64>) = tp.tau_q.iter().map(|t| first_order(*t, tp.t_s)).unzip();
    let mut b_q = Matrix::zeros(N_ZONES, N_HEATERS);
    for z in 0..N_ZONES {
        for h in 0..N_HEATERS {
            b_q[(z, h)] = g_q[z] * HEATER_WIRING[z][h] / tp.r_heat;
        }
    }
    let mut b_in = Matrix::zeros(N_SENSORS, N_ZONES + 1);
    b_in.set_block(0, 0, &tp.b_qt);
    for i in 0..N_SENSORS {
        b_in[(i, N_ZONES)] = tp.b_t[i];
    }
    let (a_tt, bd) = zoh(&tp.a_tt, &b_in, tp.t_s)?;
    let filter = |tau: &[f64], mu: &[f64]| -> (Vec<f64>, Vec<f64>) {
        tau.iter()
            .zip(mu)
            .map(|(t, m)| {
                let (a, g) = first_order(*t, tp.t_s);
                (a, g * m)
            })
            .unzip()
    };
    let (a_pp, b_p) = filter(&tp.tau_p, &tp.mu_p);
    let (a_ff, b_f) = filter(&tp.tau_f, &tp.mu_f);
    Ok(DiscreteThermal {
        a_qq,
        b_q,
        a_tt,
        b_qt: bd.block(0, 0, N_SENSORS, N_ZONES),
        b_t: Vector::new((0..N_SENSORS).map(|i| bd[(i, N_ZONES)]).collect())?,
        a_pp,
        b_p,
        a_ff,
        b_f,
        t_a: tp.t_a,
    })
}

impl DiscreteThermal {
    /// The 38x38 state matrix, block lower-triangular in `(q_f, T, δT_p, δT_f)`.
    pub fn state_matrix(&self) -> Matrix {
        let mut a = Matrix::zeros(N_STATES, N_STATES);
        for z in 0..N_ZONES {
            a[(z, z)] = self.a_qq[z];
        }
        a.set_block(N_ZONES, N_ZONES, &self.a_tt);
        a.set_block(N_ZONES, 0, &self.b_qt);
        for i in 0..N_SENSORS {
            let p = N_ZONES + N_SENSORS + i;
            a[(p, p)] = self.a_pp[i];
            a[(p + N_SENSORS, p + N_SENSORS)] = self.a_ff[i];
        }
        a
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.state_matrix())
    }

    /// One step driven by the transformed input `u_V = (V_g² w, T_a, d_p, d_f)`.
    /// Returns the next state and the output of the current one.
    pub fn linear_step(&self, s: &ThermalState, u_v: &[f64; 7]) -> (ThermalState, Vector) {
        let y = s.output();
        let mut q = vec![0.0; N_ZONES];
        self.b_q.matvec_acc(&u_v[..N_HEATERS], &mut q);
        for z in 0..N_ZONES {
            q[z] += self.a_qq[z] * s.q_f[z];
        }
        let mut t: Vec<f64> = self.b_t.iter().map(|b| b * u_v[4]).collect();
        self.a_tt.matvec_acc(&s.t, &mut t);
        self.b_qt.matvec_acc(&s.q_f, &mut t);
        let dt_p = (0..N_SENSORS).map(|i| self.a_pp[i] * s.dt_p[i] + self.b_p[i] * u_v[5]).collect();
        let dt_f = (0..N_SENSORS).map(|i| self.a_ff[i] * s.dt_f[i] + self.b_f[i] * u_v[6]).collect();
        let next = ThermalState {
            q_f: Vector::from_vec_unchecked(q),
            t: Vector::from_vec_unchecked(t),
            dt_p: Vector::from_vec_unchecked(dt_p),
            dt_f: Vector::from_vec_unchecked(dt_f),
        };
        (next, y)
    }
}

/// Validates the input and advances the plant by one sample.
pub fn plant_step(d: &DiscreteThermal, s: &ThermalState, u: &PlantInput) -> Result<(ThermalState, Vector), ThermalError> {
    u.validate()?;
    Ok(d.linear_step(s, &u.linear_input(d.t_a)))
}

//! Excitation profiles sampled every 30 s.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{PlantInput, ThermalError, N_HEATERS, SAMPLE_TIME_S};

pub const MIN_DURATION_S: f64 = 2.0 * 3600.0;
pub const MAX_DURATION_S: f64 = 7.5 * 3600.0;
const NOMINAL_GRID_V: f64 = 400.0;
const NOMINAL_FAN_HZ: f64 = 50.0;
const FAN_LEVELS: [f64; 5] = [40.0, 45.0, 50.0, 55.0, 60.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// Piecewise-constant duty cycles.
    Steps,
    /// Two-level pseudo-random binary duty cycles.
    Prbs,
    /// Pack bursts with constant duty cycles.
    Packs,
    /// All seven inputs varying, standing in for closed-loop operation.
    ClosedLoopLike,
}

impl SignalKind {
    pub const ALL: [SignalKind; 4] = [SignalKind::Steps, SignalKind::Prbs, SignalKind::Packs, SignalKind::ClosedLoopLike];

    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::Steps => "steps",
            SignalKind::Prbs => "prbs",
            SignalKind::Packs => "packs",
            SignalKind::ClosedLoopLike => "closed_loop_like",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalKind {
    type Err = ThermalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ThermalError::Signal(format!("unknown signal kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalOptions {
    /// PRBS `(low, high)` duty cycle for every channel; drawn per channel from
    /// the seed when absent.
    pub prbs_levels: Option<(f64, f64)>,
    /// Samples each PRBS bit is held for.
    pub prbs_hold: usize,
}

impl Default for SignalOptions {
    fn default() -> Self {
        Self { prbs_levels: None, prbs_hold: 8 }
    }
}

/// 16-bit Fibonacci LFSR with taps 16, 14, 13, 11 (maximal length).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lfsr(u16);

impl Lfsr {
    pub const PERIOD: usize = 65535;

    /// A zero seed would lock the register, so it is mapped to 1.
    pub fn new(seed: u16) -> Self {
        Self(if seed == 0 { 1 } else { seed })
    }

    pub fn next_bit(&mut self) -> bool {
        let s = self.0;
        let bit = (s ^ (s >> 2) ^ (s >> 3) ^ (s >> 5)) & 1;
        self.0 = (s >> 1) | (bit << 15);
        bit == 1
    }
}

fn sample_count(duration_s: f64) -> Result<usize, ThermalError> {
    if !(MIN_DURATION_S..=MAX_DURATION_S).contains(&duration_s) {
        return Err(ThermalError::Signal(format!("duration {duration_s} s outside [2 h, 7.5 h]")));
    }
    let n = duration_s / SAMPLE_TIME_S;
    if n.fract() != 0.0 {
        return Err(ThermalError::Signal(format!("duration {duration_s} s is not a multiple of 30 s")));
    }
    Ok(n as usize)
}

fn base(n: usize) -> Vec<PlantInput> {
    vec![PlantInput { w: [0.0; N_HEATERS], v_g: NOMINAL_GRID_V, d_p: 0.0, d_f: NOMINAL_FAN_HZ }; n]
}

/// Piecewise-constant values with segment lengths uniform in `hold`.
fn piecewise<R: Rng>(rng: &mut R, n: usize, hold: (usize, usize), mut level: impl FnMut(&mut R) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.random_range(hold.0..=hold.1);
        let v = level(rng);
        out.extend(std::iter::repeat_n(v, len.min(n - out.len())));
    }
    out
}

/// Two-state Markov on/off bursts with mean durations in samples.
fn bursts<R: Rng>(rng: &mut R, n: usize, mean_on: f64, mean_off: f64) -> Vec<f64> {
    let mut on = false;
    (0..n)
        .map(|_| {
            let p_switch = if on { 1.0 / mean_on } else { 1.0 / mean_off };
            if rng.random_bool(p_switch) {
                on = !on;
            }
            if on {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

fn round_duty(w: f64) -> f64 {
    (w * 1000.0).round() / 1000.0
}

pub fn gen_signals(kind: SignalKind, duration_s: f64, seed: u64) -> Result<Vec<PlantInput>, ThermalError> {
    gen_signals_with(kind, duration_s, seed, &SignalOptions::default())
}

pub fn gen_signals_with(
    kind: SignalKind,
    duration_s: f64,
    seed: u64,
    opts: &SignalOptions,
) -> Result<Vec<PlantInput>, ThermalError> {
    let n = sample_count(duration_s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = base(n);
    match kind {
        SignalKind::Steps => {
            for h in 0..N_HEATERS {
                let w = piecewise(&mut rng, n, (40, 120), |r| round_duty(r.random_range(0.0..=1.0)));
                u.iter_mut().zip(w).for_each(|(s, v)| s.w[h] = v);
            }
        }
        SignalKind::Prbs => {
            if opts.prbs_hold == 0 || opts.prbs_hold * 17 > n {
                return Err(ThermalError::Signal(format!(
                    "PRBS hold of {} samples is too long for {n} samples",
                    opts.prbs_hold
                )));
            }
            if let Some((lo, hi)) = opts.prbs_levels {
                if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
                    return Err(ThermalError::Signal("PRBS levels must satisfy 0 <= low < high <= 1".into()));
                }
            }
            for h in 0..N_HEATERS {
                let (lo, hi) = opts.prbs_levels.unwrap_or_else(|| {
                    (round_duty(rng.random_range(0.05..=0.35)), round_duty(rng.random_range(0.6..=0.95)))
                });
                let mut lfsr = Lfsr::new(rng.random());
                let mut level = lo;
                for (k, s) in u.iter_mut().enumerate() {
                    if k % opts.prbs_hold == 0 {
                        level = if lfsr.next_bit() { hi } else { lo };
                    }
                    s.w[h] = level;
                }
            }
        }
        SignalKind::Packs => {
            let w: [f64; N_HEATERS] = std::array::from_fn(|_| round_duty(rng.random_range(0.35..=0.8)));
            let d_p = bursts(&mut rng, n, 15.0, 20.0);
            u.iter_mut().zip(d_p).for_each(|(s, d)| {
                s.w = w;
                s.d_p = d;
            });
        }
        SignalKind::ClosedLoopLike => {
            for h in 0..N_HEATERS {
                let w = piecewise(&mut rng, n, (10, 40), |r| round_duty(r.random_range(0.0..=1.0)));
                u.iter_mut().zip(w).for_each(|(s, v)| s.w[h] = v);
            }
            let step = Normal::new(0.0, 1.5).expect("valid normal");
            let mut v = NOMINAL_GRID_V;
            for s in u.iter_mut() {
                v = (v + step.sample(&mut rng)).clamp(370.0, 430.0);
                s.v_g = (v * 100.0).round() / 100.0;
            }
            let d_p = bursts(&mut rng, n, 15.0, 25.0);
            let d_f = piecewise(&mut rng, n, (60, 180), |r| FAN_LEVELS[r.random_range(0..FAN_LEVELS.len())]);
            u.iter_mut().zip(d_p.into_iter().zip(d_f)).for_each(|(s, (p, f))| {
                s.d_p = p;
                s.d_f = f;
            });
        }
    }
    Ok(u)
}

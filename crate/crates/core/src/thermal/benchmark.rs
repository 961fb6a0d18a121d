//! Twelve-experiment synthetic benchmark.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::signals::{gen_signals_with, SignalKind, SignalOptions, MAX_DURATION_S, MIN_DURATION_S};
use super::{default_params, discretize, plant_step, PlantInput, ThermalError, ThermalParams, ThermalState};
use crate::data::{Dataset, Sequence, Split};
use crate::numerics::Vector;
use crate::thermal::SAMPLE_TIME_S;

/// Three experiments per kind and the split of each. Every split holds at
/// least one experiment in which all seven inputs vary.
pub const BENCHMARK_LAYOUT: [(SignalKind, [Split; 3]); 4] = [
    (SignalKind::Steps, [Split::Train, Split::Train, Split::Train]),
    (SignalKind::Prbs, [Split::Train, Split::Train, Split::Val]),
    (SignalKind::Packs, [Split::Train, Split::Train, Split::Train]),
    (SignalKind::ClosedLoopLike, [Split::Train, Split::Val, Split::Test]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOptions {
    /// Standard deviation of the additive output noise, °C.
    pub noise_sigma: f64,
    pub params: ThermalParams,
    /// Fixed duration for every experiment; drawn from [2 h, 7.5 h] when absent.
    pub duration_s: Option<f64>,
    pub signals: SignalOptions,
    /// Experiment kinds to emit. Skipped kinds still consume their random
    /// draws, so every emitted experiment matches the full benchmark.
    pub kinds: Vec<SignalKind>,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            noise_sigma: 0.1,
            params: default_params(),
            duration_s: None,
            signals: SignalOptions::default(),
            kinds: SignalKind::ALL.to_vec(),
        }
    }
}

/// Noise-free outputs relative to ambient, from a cold start.
pub fn simulate_plant(tp: &ThermalParams, inputs: &[PlantInput]) -> Result<Vec<Vector>, ThermalError> {
    let d = discretize(tp)?;
    let Some(first) = inputs.first() else {
        return Ok(Vec::new());
    };
    let mut s = ThermalState::cold_start(tp, first.d_f);
    let mut out = Vec::with_capacity(inputs.len());
    for u in inputs {
        let (next, y) = plant_step(&d, &s, u)?;
        out.push(Vector::from_vec_unchecked(y.iter().map(|v| v - tp.t_a).collect()));
        s = next;
    }
    Ok(out)
}

pub fn make_benchmark(seed: u64) -> Dataset {
    make_benchmark_with(seed, &BenchmarkOptions::default()).expect("default benchmark is valid")
}

pub fn make_benchmark_with(seed: u64, opts: &BenchmarkOptions) -> Result<Dataset, ThermalError> {
    if !(opts.noise_sigma >= 0.0 && opts.noise_sigma.is_finite()) {
        return Err(ThermalError::Signal("noise sigma must be finite and nonnegative".into()));
    }
    let noise = Normal::new(0.0, opts.noise_sigma).expect("checked sigma");
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = ((MIN_DURATION_S / SAMPLE_TIME_S) as usize, (MAX_DURATION_S / SAMPLE_TIME_S) as usize);
    let mut sequences = Vec::new();
    let mut split = BTreeMap::new();
    for (kind, splits) in BENCHMARK_LAYOUT {
        for (i, which) in splits.into_iter().enumerate() {
            let duration = opts.duration_s.unwrap_or_else(|| master.random_range(lo..=hi) as f64 * SAMPLE_TIME_S);
            let signal_seed: u64 = master.random();
            let mut noise_rng = ChaCha8Rng::seed_from_u64(master.random());
            if !opts.kinds.contains(&kind) {
                continue;
            }
            let inputs = gen_signals_with(kind, duration, signal_seed, &opts.signals)?;
            let mut outputs = simulate_plant(&opts.params, &inputs)?;
            if opts.noise_sigma > 0.0 {
                for y in &mut outputs {
                    *y = Vector::from_vec_unchecked(y.iter().map(|v| v + noise.sample(&mut noise_rng)).collect());
                }
            }
            let id = format!("{kind}_{}", i + 1);
            split.insert(id.clone(), which);
            sequences.push(Sequence::new(id, inputs.iter().map(PlantInput::to_vector).collect(), outputs)?);
        }
    }
    Ok(Dataset::new(sequences, split)?)
}

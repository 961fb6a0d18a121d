use isslstm::thermal::{
    default_params, discretize, gen_signals, plant_step, simulate_plant, PlantInput, SignalKind, ThermalParams,
    ThermalState, HEATER_WIRING, N_HEATERS, N_SENSORS, N_ZONES, SAMPLE_TIME_S,
};

fn held(w: [f64; 4]) -> PlantInput {
    PlantInput { w, v_g: 400.0, d_p: 0.0, d_f: 50.0 }
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Continuous-time right-hand side with `q_hold` driving the circuit.
fn derivative(tp: &ThermalParams, x: &[f64], q_hold: &[f64], u: &PlantInput) -> Vec<f64> {
    let n = N_SENSORS;
    let (q, t, dp, df) = (&x[..N_ZONES], &x[N_ZONES..N_ZONES + n], &x[N_ZONES + n..N_ZONES + 2 * n], &x[N_ZONES + 2 * n..]);
    let v2 = u.v_g * u.v_g;
    let mut dx = Vec::with_capacity(x.len());
    for z in 0..N_ZONES {
        let target: f64 = (0..N_HEATERS).map(|h| HEATER_WIRING[z][h] * v2 * u.w[h]).sum::<f64>() / tp.r_heat;
        dx.push((target - q[z]) / tp.tau_q[z]);
    }
    for i in 0..n {
        let mut d = tp.b_t[i] * tp.t_a;
        for j in 0..n {
            d += tp.a_tt[(i, j)] * t[j];
        }
        for z in 0..N_ZONES {
            d += tp.b_qt[(i, z)] * q_hold[z];
        }
        dx.push(d);
    }
    dx.extend((0..n).map(|i| (tp.mu_p[i] * u.d_p - dp[i]) / tp.tau_p[i]));
    dx.extend((0..n).map(|i| (tp.mu_f[i] * u.d_f - df[i]) / tp.tau_f[i]));
    dx
}

/// RK4 over one sampling interval with `substeps` steps, `q_f` held at its sampled value.
fn rk4_interval(tp: &ThermalParams, x: &[f64], u: &PlantInput, substeps: usize) -> Vec<f64> {
    let h = tp.t_s / substeps as f64;
    let q_hold = x[..N_ZONES].to_vec();
    let axpy = |a: &[f64], k: &[f64], s: f64| a.iter().zip(k).map(|(a, k)| a + s * k).collect::<Vec<_>>();
    let mut x = x.to_vec();
    for _ in 0..substeps {
        let k1 = derivative(tp, &x, &q_hold, u);
        let k2 = derivative(tp, &axpy(&x, &k1, h / 2.0), &q_hold, u);
        let k3 = derivative(tp, &axpy(&x, &k2, h / 2.0), &q_hold, u);
        let k4 = derivative(tp, &axpy(&x, &k3, h), &q_hold, u);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

fn output_of(x: &[f64]) -> Vec<f64> {
    let n = N_SENSORS;
    (0..n).map(|i| x[N_ZONES + i] + x[N_ZONES + n + i] + x[N_ZONES + 2 * n + i]).collect()
}

#[test]
fn discrete_state_matrix_is_schur_stable() {
    let d = discretize(&default_params()).unwrap();
    let rho = d.spectral_radius();
    assert!(rho < 1.0, "spectral radius {rho}");
    // slowest mode, a 200 s pack filter, is not trivially damped
    assert!((rho - (-30.0_f64 / 200.0).exp()).abs() < 1e-12, "spectral radius {rho}");
}

#[test]
fn heat_filter_settles_on_resistor_power() {
    let tp = default_params();
    let d = discretize(&tp).unwrap();
    let u = held([0.8, 0.3, 0.55, 1.0]);
    let mut s = ThermalState::cold_start(&tp, u.d_f);
    for _ in 0..400 {
        s = plant_step(&d, &s, &u).unwrap().0;
    }
    let v2 = u.v_g * u.v_g;
    let expected = [(2.0 * v2 * u.w[0] + v2 * u.w[1]) / tp.r_heat, (2.0 * v2 * u.w[2] + v2 * u.w[3]) / tp.r_heat];
    for z in 0..N_ZONES {
        assert!((s.q_f[z] - expected[z]).abs() <= 1e-9 * expected[z], "zone {z}: {} vs {}", s.q_f[z], expected[z]);
    }
}

#[test]
fn response_is_linear_in_transformed_input() {
    let d = discretize(&default_params()).unwrap();
    let u1 = gen_signals(SignalKind::ClosedLoopLike, 7200.0, 1).unwrap();
    let u2 = gen_signals(SignalKind::Steps, 7200.0, 2).unwrap();
    let (a, b) = (0.7, -1.3);
    let mut s1 = ThermalState::zeros();
    let mut s2 = ThermalState::zeros();
    let mut s12 = ThermalState::zeros();
    let mut worst = 0.0_f64;
    for (p, q) in u1.iter().zip(&u2) {
        let (v1, v2) = (p.linear_input(22.0), q.linear_input(18.0));
        let mix: [f64; 7] = std::array::from_fn(|i| a * v1[i] + b * v2[i]);
        let (n1, _) = d.linear_step(&s1, &v1);
        let (n2, _) = d.linear_step(&s2, &v2);
        let (n12, _) = d.linear_step(&s12, &mix);
        let (x1, x2, x12) = (n1.to_vec(), n2.to_vec(), n12.to_vec());
        let scale = max_abs(x12.iter().copied()).max(1.0);
        for i in 0..x1.len() {
            worst = worst.max((x12[i] - (a * x1[i] + b * x2[i])).abs() / scale);
        }
        (s1, s2, s12) = (n1, n2, n12);
    }
    assert!(worst <= 1e-9, "superposition residual {worst:e}");
}

#[test]
fn zoh_matches_fine_grid_integration() {
    let tp = default_params();
    let d = discretize(&tp).unwrap();
    let inputs = gen_signals(SignalKind::ClosedLoopLike, 7200.0, 7).unwrap();
    let mut s = ThermalState::cold_start(&tp, inputs[0].d_f);
    let mut x = s.to_vec();
    let mut worst = 0.0_f64;
    for u in &inputs {
        s = plant_step(&d, &s, u).unwrap().0;
        x = rk4_interval(&tp, &x, u, 100);
        let (y_zoh, y_ref) = (s.output(), output_of(&x));
        let scale = max_abs(y_ref.iter().copied());
        worst = worst.max(max_abs(y_zoh.iter().zip(&y_ref).map(|(a, b)| a - b)) / scale);
    }
    assert!(worst <= 1e-6, "relative deviation {worst:e}");
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let tp = default_params();
    let d = discretize(&tp).unwrap();
    let u = PlantInput { w: [0.4, 0.9, 0.1, 0.6], v_g: 390.0, d_p: 1.0, d_f: 45.0 };
    let s = ThermalState::equilibrium(&tp, &u).unwrap();
    let (next, y) = plant_step(&d, &s, &u).unwrap();
    let (a, b) = (s.to_vec(), next.to_vec());
    let scale = max_abs(a.iter().copied());
    assert!(max_abs(a.iter().zip(&b).map(|(x, y)| x - y)) <= 1e-10 * scale);
    assert_eq!(y, s.output());
    // everything heats above ambient with the heaters on
    assert!(s.t.iter().all(|t| *t > tp.t_a));
}

#[test]
fn more_duty_never_cools() {
    let tp = default_params();
    let d = discretize(&tp).unwrap();
    let lo = held([0.2, 0.2, 0.2, 0.2]);
    let hi = held([0.2, 0.6, 0.2, 0.2]);
    let (mut a, mut b) = (ThermalState::cold_start(&tp, 50.0), ThermalState::cold_start(&tp, 50.0));
    for _ in 0..300 {
        let (na, ya) = plant_step(&d, &a, &lo).unwrap();
        let (nb, yb) = plant_step(&d, &b, &hi).unwrap();
        assert!(ya.iter().zip(yb.iter()).all(|(x, y)| y >= x));
        (a, b) = (na, nb);
    }
}

#[test]
fn heating_one_zone_reaches_the_other_later() {
    let tp = default_params();
    let u = vec![held([1.0, 1.0, 0.0, 0.0]); 240];
    let y = simulate_plant(&tp, &u).unwrap();
    let last = &y[239];
    // zone 1 sensors end up hotter than zone 2 sensors
    let z1 = (0..6).map(|i| last[i]).fold(f64::INFINITY, f64::min);
    let z2 = (6..12).map(|i| last[i]).fold(f64::NEG_INFINITY, f64::max);
    assert!(z1 > z2);
    // the far end of zone 2 lags behind the near end
    let first_above = |i: usize| y.iter().position(|v| v[i] - y[0][i] > 1.0).unwrap_or(usize::MAX);
    assert!(first_above(6) < first_above(11));
    assert!(first_above(0) < first_above(6));
    assert!(first_above(11) < usize::MAX);
}

#[test]
fn benchmark_outputs_start_at_the_fan_offset() {
    let tp = default_params();
    let u = gen_signals(SignalKind::Packs, 7200.0, 3).unwrap();
    let y = simulate_plant(&tp, &u).unwrap();
    for i in 0..N_SENSORS {
        assert!((y[0][i] - tp.mu_f[i] * u[0].d_f).abs() < 1e-12);
    }
    assert_eq!(tp.t_s, SAMPLE_TIME_S);
}

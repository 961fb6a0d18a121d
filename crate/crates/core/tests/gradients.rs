use isslstm::data::Sequence;
use isslstm::iss::network_condition;
use isslstm::lstm::{Architecture, NetworkParams};
use isslstm::numerics::Vector;
use isslstm::training::gradcheck::{generic_network, gradient_audit, relative_error, DEFAULT_STEP};
use isslstm::training::{bptt_gradients, loss, penalty, penalty_gradient, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_sequences(rng: &mut ChaCha8Rng, n_u: usize, n_y: usize, len: usize, count: usize) -> Vec<Sequence> {
    (0..count)
        .map(|e| {
            let mut draw = |n: usize| Vector::new((0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()).unwrap();
            let u: Vec<Vector> = (0..len).map(|_| draw(n_u)).collect();
            let y: Vec<Vector> = (0..len).map(|_| draw(n_y)).collect();
            Sequence::new(format!("s{e}"), u, y).unwrap()
        })
        .collect()
}

#[test]
fn bptt_matches_central_differences() {
    let arch = Architecture::new(2, vec![3, 4], 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for rho in [0.0, 0.05] {
        let cfg = TrainConfig { rho, ..TrainConfig::protocol(1e-3, 0) };
        for _ in 0..3 {
            let np = generic_network(&arch, &mut rng, 0.8, &cfg, &[1.0, 1.0]).unwrap();
            let data = random_sequences(&mut rng, 2, 2, 10, 2);
            let rep = gradient_audit(&np, &data, &cfg, &[1.0, 1.0], DEFAULT_STEP).unwrap();
            assert!(rep.max_rel_error <= 1e-6, "rho={rho}: {rep:?}");
        }
    }
}

#[test]
fn penalty_gradient_matches_differences_and_sparsity() {
    let arch = Architecture::new(2, vec![3, 4], 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = TrainConfig::protocol(1e-3, 0);
    let u_max = [1.0, 0.5];
    let mut seen_violation = false;
    for _ in 0..10 {
        let np = generic_network(&arch, &mut rng, 0.8, &cfg, &u_max).unwrap();
        let mut g = NetworkParams::zeros(&arch).unwrap();
        penalty_gradient(&np, &cfg, &u_max, &mut g).unwrap();
        let report = network_condition(&np, &u_max).unwrap();
        let analytic = g.flatten();
        let base = np.flatten();
        let mut probe = np.clone();
        for idx in 0..base.len() {
            let mut x = base.clone();
            x[idx] += DEFAULT_STEP;
            probe.assign_flat(&x).unwrap();
            let up = penalty(&probe, &cfg, &u_max).unwrap();
            x[idx] -= 2.0 * DEFAULT_STEP;
            probe.assign_flat(&x).unwrap();
            let down = penalty(&probe, &cfg, &u_max).unwrap();
            let numeric = (up - down) / (2.0 * DEFAULT_STEP);
            assert!(relative_error(analytic[idx], numeric) <= 1e-6, "entry {idx}: {} vs {numeric}", analytic[idx]);
        }
        for (l, (gl, rl)) in g.layers.iter().zip(&report.layers).enumerate() {
            let active = rl.margin + cfg.gamma_margin > 0.0;
            seen_violation |= active;
            let zero = |m: &[f64]| m.iter().all(|v| *v == 0.0);
            assert!(zero(gl.output.w.data()) && zero(gl.output.r.data()) && zero(&gl.output.b));
            assert!(zero(gl.cell.w.data()) && zero(&gl.cell.b), "layer {l}");
            if !active {
                assert!(zero(gl.forget.w.data()) && zero(gl.input.r.data()) && zero(gl.cell.r.data()));
            }
        }
        assert!(zero_all(&g.w_y.data().to_vec()) && zero_all(&g.b_y));
    }
    assert!(seen_violation);
}

fn zero_all(v: &[f64]) -> bool {
    v.iter().all(|x| *x == 0.0)
}

#[test]
fn gradient_is_deterministic_across_thread_counts() {
    let arch = Architecture::new(2, vec![3, 4], 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = TrainConfig::protocol(1e-3, 0);
    let np = generic_network(&arch, &mut rng, 0.5, &cfg, &[1.0, 1.0]).unwrap();
    let data = random_sequences(&mut rng, 2, 2, 25, 7);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| (loss(&np, &data, &cfg, &[1.0, 1.0]).unwrap(), bptt_gradients(&np, &data, &cfg, &[1.0, 1.0]).unwrap()))
    };
    let (l1, g1) = run(1);
    let (l4, g4) = run(4);
    assert_eq!(l1.to_bits(), l4.to_bits());
    assert_eq!(g1, g4);
}

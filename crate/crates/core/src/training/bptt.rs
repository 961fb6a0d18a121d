//! Reverse-mode gradients through a free-run simulation.

use rayon::prelude::*;

use super::loss::{check_data, check_u_max, penalty, penalty_gradient};
use super::{TrainConfig, TrainError};
use crate::data::Sequence;
use crate::lstm::{layer_step_into, GateParams, GateValues, NetworkParams};
use crate::numerics::Matrix;

/// Forward activations of one layer over a sequence, row-major by step.
struct LayerTape {
    n_in: usize,
    n: usize,
    /// Layer input at step `k`.
    x: Vec<f64>,
    /// States `c_0 .. c_N`, `h_0 .. h_N`.
    c: Vec<f64>,
    h: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tc: Vec<f64>,
}

impl LayerTape {
    fn new(n_in: usize, n: usize, steps: usize) -> Self {
        let z = |len: usize| vec![0.0; len];
        Self {
            n_in,
            n,
            x: z(steps * n_in),
            c: z((steps + 1) * n),
            h: z((steps + 1) * n),
            f: z(steps * n),
            i: z(steps * n),
            o: z(steps * n),
            g: z(steps * n),
            tc: z(steps * n),
        }
    }

    fn record(&mut self, k: usize, input: &[f64], gates: &GateValues) {
        let (n, m) = (self.n, self.n_in);
        self.x[k * m..(k + 1) * m].copy_from_slice(input);
        self.f[k * n..(k + 1) * n].copy_from_slice(&gates.f);
        self.i[k * n..(k + 1) * n].copy_from_slice(&gates.i);
        self.o[k * n..(k + 1) * n].copy_from_slice(&gates.o);
        self.g[k * n..(k + 1) * n].copy_from_slice(&gates.g);
        self.tc[k * n..(k + 1) * n].copy_from_slice(&gates.tanh_c);
    }
}

/// `m += a bᵀ`.
fn outer_acc(m: &mut Matrix, a: &[f64], b: &[f64]) {
    let cols = m.cols();
    if cols == 0 {
        return;
    }
    for (row, &ar) in m.data_mut().chunks_exact_mut(cols).zip(a) {
        if ar == 0.0 {
            continue;
        }
        for (v, bc) in row.iter_mut().zip(b) {
            *v += ar * bc;
        }
    }
}

fn gate_acc(g: &mut GateParams, dz: &[f64], x: &[f64], h_prev: &[f64]) {
    outer_acc(&mut g.w, dz, x);
    outer_acc(&mut g.r, dz, h_prev);
    for (b, d) in g.b.as_mut_slice().iter_mut().zip(dz) {
        *b += d;
    }
}

/// Adds `weight · ∂(per-step mean squared error)/∂θ` of one sequence to `grad`
/// and returns `weight · (per-step mean squared error)`.
fn sequence_gradient(np: &NetworkParams, seq: &Sequence, weight: f64, grad: &mut NetworkParams) -> f64 {
    let steps = seq.len();
    let n_layers = np.layers.len();
    let n_y = np.n_y();
    let mut tapes: Vec<LayerTape> = np.layers.iter().map(|p| LayerTape::new(p.n_in(), p.n_hu(), steps)).collect();
    let mut gates: Vec<GateValues> = np.layers.iter().map(|p| GateValues::zeros(p.n_hu())).collect();
    let mut dys = vec![0.0; steps * n_y];
    let mut sse = 0.0;
    let scale = 2.0 * weight / steps as f64;

    for k in 0..steps {
        for l in 0..n_layers {
            let (below, rest) = tapes.split_at_mut(l);
            let tape = &mut rest[0];
            let n = tape.n;
            let input: &[f64] = if l == 0 {
                &seq.inputs[k]
            } else {
                let t = &below[l - 1];
                &t.h[(k + 1) * t.n..(k + 2) * t.n]
            };
            let (c_prev, c_next) = tape.c[k * n..(k + 2) * n].split_at_mut(n);
            let (h_prev, h_next) = tape.h[k * n..(k + 2) * n].split_at_mut(n);
            layer_step_into(&np.layers[l], c_prev, h_prev, input, &mut gates[l], c_next, h_next);
            tape.record(k, input, &gates[l]);
        }
        let top = &tapes[n_layers - 1];
        let h_top = &top.h[(k + 1) * top.n..(k + 2) * top.n];
        let mut y = np.b_y.to_vec();
        np.w_y.matvec_acc(h_top, &mut y);
        for j in 0..n_y {
            let e = y[j] - seq.outputs[k][j];
            sse += e * e;
            dys[k * n_y + j] = scale * e;
        }
    }

    let mut dh_carry: Vec<Vec<f64>> = np.layers.iter().map(|p| vec![0.0; p.n_hu()]).collect();
    let mut dc_carry = dh_carry.clone();
    let mut dz: Vec<[Vec<f64>; 4]> =
        np.layers.iter().map(|p| std::array::from_fn(|_| vec![0.0; p.n_hu()])).collect();
    for k in (0..steps).rev() {
        let dy = &dys[k * n_y..(k + 1) * n_y];
        let top = &tapes[n_layers - 1];
        outer_acc(&mut grad.w_y, dy, &top.h[(k + 1) * top.n..(k + 2) * top.n]);
        for (b, d) in grad.b_y.as_mut_slice().iter_mut().zip(dy) {
            *b += d;
        }
        let mut dh_above = vec![0.0; top.n];
        np.w_y.matvec_t_acc(dy, &mut dh_above);

        for l in (0..n_layers).rev() {
            let p = &np.layers[l];
            let t = &tapes[l];
            let n = t.n;
            let [dzf, dzi, dzo, dzg] = &mut dz[l];
            for r in 0..n {
                let idx = k * n + r;
                let (f, i, o, g, tc) = (t.f[idx], t.i[idx], t.o[idx], t.g[idx], t.tc[idx]);
                let dh = dh_above[r] + dh_carry[l][r];
                let dc = dh * o * (1.0 - tc * tc) + dc_carry[l][r];
                dzf[r] = dc * t.c[idx] * f * (1.0 - f);
                dzi[r] = dc * g * i * (1.0 - i);
                dzo[r] = dh * tc * o * (1.0 - o);
                dzg[r] = dc * i * (1.0 - g * g);
                dc_carry[l][r] = dc * f;
            }
            let x = &t.x[k * t.n_in..(k + 1) * t.n_in];
            let h_prev = &t.h[k * n..(k + 1) * n];
            let gl = &mut grad.layers[l];
            gate_acc(&mut gl.forget, dzf, x, h_prev);
            gate_acc(&mut gl.input, dzi, x, h_prev);
            gate_acc(&mut gl.output, dzo, x, h_prev);
            gate_acc(&mut gl.cell, dzg, x, h_prev);

            let carry = &mut dh_carry[l];
            carry.iter_mut().for_each(|v| *v = 0.0);
            for (gp, d) in [(&p.forget, &*dzf), (&p.input, &*dzi), (&p.output, &*dzo), (&p.cell, &*dzg)] {
                gp.r.matvec_t_acc(d, carry);
            }
            if l > 0 {
                dh_above = vec![0.0; t.n_in];
                for (gp, d) in [(&p.forget, &*dzf), (&p.input, &*dzi), (&p.output, &*dzo), (&p.cell, &*dzg)] {
                    gp.w.matvec_t_acc(d, &mut dh_above);
                }
            }
        }
    }
    weight * sse / steps as f64
}

/// Loss and its gradient (exact BPTT for the data term, subgradient for the
/// penalty). Per-sequence work runs in parallel and is reduced in sequence
/// order, so results do not depend on the thread count.
pub fn loss_and_gradients(
    np: &NetworkParams,
    data: &[Sequence],
    cfg: &TrainConfig,
    u_max: &[f64],
) -> Result<(f64, NetworkParams), TrainError> {
    np.validate()?;
    check_data(np, data)?;
    check_u_max(np, u_max)?;
    let arch = np.architecture();
    let weight = 1.0 / data.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = data
        .par_iter()
        .map(|s| {
            let mut g = NetworkParams::zeros(&arch).expect("validated architecture");
            let l = sequence_gradient(np, s, weight, &mut g);
            (l, g.flatten())
        })
        .collect();
    let mut total = vec![0.0; np.param_count()];
    let mut data_loss = 0.0;
    for (l, g) in &parts {
        data_loss += l;
        total.iter_mut().zip(g).for_each(|(t, v)| *t += v);
    }
    let mut grad = NetworkParams::zeros(&arch)?;
    grad.assign_flat(&total)?;
    penalty_gradient(np, cfg, u_max, &mut grad)?;
    Ok((data_loss + penalty(np, cfg, u_max)?, grad))
}

pub fn bptt_gradients(
    np: &NetworkParams,
    data: &[Sequence],
    cfg: &TrainConfig,
    u_max: &[f64],
) -> Result<NetworkParams, TrainError> {
    Ok(loss_and_gradients(np, data, cfg, u_max)?.1)
}

use rayon::prelude::*;

use super::{TrainConfig, TrainError};
use crate::data::Sequence;
use crate::iss::{argmax, gate_row_sums, layer_condition, layer_input_bound};
use crate::lstm::{predict, GateParams, NetworkParams};
use crate::numerics::{sigmoid, Matrix};

pub(crate) fn check_data(np: &NetworkParams, data: &[Sequence]) -> Result<(), TrainError> {
    if data.is_empty() {
        return Err(TrainError::Domain("empty dataset".into()));
    }
    if let Some(s) = data.iter().find(|s| s.is_empty() || s.n_u() != np.n_u() || s.n_y() != np.n_y()) {
        return Err(TrainError::Domain(format!(
            "sequence {} does not match a network with {} inputs and {} outputs",
            s.id,
            np.n_u(),
            np.n_y()
        )));
    }
    Ok(())
}

pub(crate) fn check_u_max(np: &NetworkParams, u_max: &[f64]) -> Result<(), TrainError> {
    if u_max.len() != np.n_u() {
        return Err(TrainError::Domain(format!("u_max has length {}, network has {} inputs", u_max.len(), np.n_u())));
    }
    Ok(())
}

fn sequence_mse(np: &NetworkParams, s: &Sequence) -> Result<f64, TrainError> {
    let pred = predict(np, &s.inputs)?;
    let sse: f64 = pred
        .iter()
        .zip(&s.outputs)
        .map(|(p, y)| p.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok(sse / s.len() as f64)
}

/// Mean over sequences of the per-step mean squared 2-norm output error of a
/// free-run simulation from the zero state.
pub fn mse(np: &NetworkParams, data: &[Sequence]) -> Result<f64, TrainError> {
    np.validate()?;
    check_data(np, data)?;
    let per: Vec<f64> = data.par_iter().map(|s| sequence_mse(np, s)).collect::<Result<_, _>>()?;
    Ok(per.iter().sum::<f64>() / data.len() as f64)
}

/// Condition value of layer `layer` minus one; negative when it holds.
pub fn stability_term(np: &NetworkParams, u_max: &[f64], layer: usize) -> Result<f64, TrainError> {
    check_u_max(np, u_max)?;
    let p = np
        .layers
        .get(layer)
        .ok_or_else(|| TrainError::Domain(format!("layer {layer} out of range for {} layers", np.layers.len())))?;
    Ok(layer_condition(p, &layer_input_bound(np, layer, u_max))?.margin)
}

/// `ρ Σ_l max(ISS_l + γ, 0)`.
pub fn penalty(np: &NetworkParams, cfg: &TrainConfig, u_max: &[f64]) -> Result<f64, TrainError> {
    if cfg.rho == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for l in 0..np.layers.len() {
        total += (stability_term(np, u_max, l)? + cfg.gamma_margin).max(0.0);
    }
    Ok(cfg.rho * total)
}

pub fn loss(np: &NetworkParams, data: &[Sequence], cfg: &TrainConfig, u_max: &[f64]) -> Result<f64, TrainError> {
    Ok(mse(np, data)? + penalty(np, cfg, u_max)?)
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adds `scale · ∂(max row sum)/∂θ` for the row-sum norm of `[|W|ũ_max, R, b]`.
fn row_norm_subgradient(p: &GateParams, u_max: &[f64], scale: f64, g: &mut GateParams) {
    let r = argmax(&gate_row_sums(p, u_max));
    for c in 0..p.w.cols() {
        g.w[(r, c)] += scale * sign(p.w[(r, c)]) * u_max[c];
    }
    for c in 0..p.r.cols() {
        g.r[(r, c)] += scale * sign(p.r[(r, c)]);
    }
    g.b.as_mut_slice()[r] += scale * sign(p.b[r]);
}

fn inf_norm_subgradient(m: &Matrix, scale: f64, g: &mut Matrix) {
    let r = argmax(&m.row_abs_sums());
    for c in 0..m.cols() {
        g[(r, c)] += scale * sign(m[(r, c)]);
    }
}

/// Adds the penalty subgradient to `grad`. Rows are chosen by argmax with the
/// lowest index on ties, `|x|` has derivative `sign(x)` and the hinge has
/// derivative zero at its kink.
pub fn penalty_gradient(
    np: &NetworkParams,
    cfg: &TrainConfig,
    u_max: &[f64],
    grad: &mut NetworkParams,
) -> Result<(), TrainError> {
    if cfg.rho == 0.0 {
        return Ok(());
    }
    check_u_max(np, u_max)?;
    for (l, p) in np.layers.iter().enumerate() {
        let ub = layer_input_bound(np, l, u_max);
        let rep = layer_condition(p, &ub)?;
        if rep.margin + cfg.gamma_margin <= 0.0 {
            continue;
        }
        let g = &mut grad.layers[l];
        let mf = gate_row_sums(&p.forget, &ub).into_iter().fold(0.0, f64::max);
        let mi = gate_row_sums(&p.input, &ub).into_iter().fold(0.0, f64::max);
        let (sf, si) = (sigmoid(mf), sigmoid(mi));
        row_norm_subgradient(&p.forget, &ub, cfg.rho * sf * (1.0 - sf), &mut g.forget);
        row_norm_subgradient(&p.input, &ub, cfg.rho * si * (1.0 - si) * rep.rg_inf_norm, &mut g.input);
        inf_norm_subgradient(&p.cell.r, cfg.rho * si, &mut g.cell.r);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::Architecture;
    use crate::numerics::Vector;

    fn scalar_net() -> NetworkParams {
        NetworkParams::zeros(&Architecture::new(1, vec![1], 1).unwrap()).unwrap()
    }

    fn seq(u: &[f64], y: &[f64]) -> Sequence {
        Sequence::new(
            "s",
            u.iter().map(|v| Vector::new(vec![*v]).unwrap()).collect(),
            y.iter().map(|v| Vector::new(vec![*v]).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn mse_examples() {
        let np = scalar_net();
        assert_eq!(mse(&np, &[seq(&[0.0, 0.0], &[1.0, 1.0])]).unwrap(), 1.0);
        assert_eq!(mse(&np, &[seq(&[0.0, 0.0], &[0.0, 0.0])]).unwrap(), 0.0);
        let two = [seq(&[0.0, 0.0], &[1.0, 1.0]), seq(&[0.0, 0.0], &[3f64.sqrt(), -(3f64.sqrt())])];
        assert!((mse(&np, &two).unwrap() - 2.0).abs() < 1e-15);
        assert!(mse(&np, &[]).is_err());
    }

    #[test]
    fn stability_term_and_hinge() {
        let mut np = scalar_net();
        assert_eq!(stability_term(&np, &[1.0], 0).unwrap(), -0.5);
        np.layers[0].cell.r[(0, 0)] = 1.2;
        let t = stability_term(&np, &[1.0], 0).unwrap();
        assert!((t - 0.1).abs() < 1e-15);
        assert_eq!(t, layer_condition(&np.layers[0], &[1.0]).unwrap().margin);
        let cfg = TrainConfig::protocol(1e-3, 0);
        assert!((penalty(&np, &cfg, &[1.0]).unwrap() - 0.0075).abs() < 1e-15);
        let data = [seq(&[0.5, -0.5], &[0.2, 0.1])];
        let m = mse(&np, &data).unwrap();
        assert_eq!(loss(&np, &data, &TrainConfig { rho: 0.0, ..cfg.clone() }, &[1.0]).unwrap(), m);
        assert!(stability_term(&np, &[1.0], 1).is_err());
    }

    #[test]
    fn penalty_gradient_sparsity() {
        let mut np = scalar_net();
        np.layers[0].cell.r[(0, 0)] = 1.2;
        np.layers[0].forget.b = Vector::new(vec![0.3]).unwrap();
        np.layers[0].input.w[(0, 0)] = -0.4;
        let cfg = TrainConfig::protocol(1e-3, 0);
        let mut g = NetworkParams::zeros(&np.architecture()).unwrap();
        penalty_gradient(&np, &cfg, &[1.0], &mut g).unwrap();
        let p = &g.layers[0];
        assert!(p.forget.b[0] > 0.0);
        assert!(p.input.w[(0, 0)] < 0.0);
        assert!(p.cell.r[(0, 0)] > 0.0);
        assert_eq!(p.forget.w[(0, 0)], 0.0);
        assert_eq!(p.cell.w[(0, 0)], 0.0);
        assert_eq!(p.cell.b[0], 0.0);
        assert!(p.output.w.data().iter().chain(p.output.r.data()).all(|v| *v == 0.0));
    }
}

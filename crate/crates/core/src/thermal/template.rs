use serde::{Deserialize, Serialize};

use super::{ThermalError, ThermalParams, N_SENSORS, N_ZONES, SAMPLE_TIME_S};
use crate::numerics::{Matrix, Vector};

/// Structured parameterisation of [`ThermalParams`].
///
/// The twelve sensors sit on a chain of thermal nodes (zone 1 = nodes 1-6,
/// zone 2 = nodes 7-12), each with capacitance `capacitance`, a resistance to
/// ambient and a resistance to its chain neighbours. A zone's heat flow is
/// shared evenly by its six nodes. That gives
///
/// ```text
/// A_TT = -(diag(1/r_amb) + L) / C     L = chain Laplacian of 1/r_couple
/// B_qT[ι, z] = 1 / (6 C)  for ι in zone z
/// b_T  = (1/r_amb) / C
/// ```
///
/// The 74 free parameters are `r_amb` (12), `r_couple` (11), `r_heat`,
/// `tau_q` (2), `tau_p`, `mu_p`, `tau_f`, `mu_f` (12 each). The capacitance
/// only rescales the resistances, so it is kept fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalTemplate {
    /// J/K per node.
    pub capacitance: f64,
    /// K/W, node to ambient.
    pub r_amb: Vec<f64>,
    /// K/W, node `i` to node `i + 1`.
    pub r_couple: Vec<f64>,
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
    pub t_a: f64,
}

const NODES_PER_ZONE: usize = N_SENSORS / N_ZONES;

impl ThermalTemplate {
    pub fn free_parameter_count(&self) -> usize {
        self.r_amb.len()
            + self.r_couple.len()
            + 1
            + self.tau_q.len()
            + self.tau_p.len()
            + self.mu_p.len()
            + self.tau_f.len()
            + self.mu_f.len()
    }

    pub fn to_params(&self) -> Result<ThermalParams, ThermalError> {
        if self.r_amb.len() != N_SENSORS || self.r_couple.len() != N_SENSORS - 1 {
            return Err(ThermalError::Params("r_amb needs 12 entries and r_couple 11".into()));
        }
        if !(self.capacitance > 0.0) || self.r_amb.iter().chain(&self.r_couple).any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(ThermalError::Params("capacitance and resistances must be positive".into()));
        }
        let c = self.capacitance;
        let g_amb: Vec<f64> = self.r_amb.iter().map(|r| 1.0 / r).collect();
        let mut a_tt = Matrix::zeros(N_SENSORS, N_SENSORS);
        for i in 0..N_SENSORS {
            a_tt[(i, i)] = -g_amb[i] / c;
        }
        for (i, r) in self.r_couple.iter().enumerate() {
            let g = 1.0 / r / c;
            a_tt[(i, i)] -= g;
            a_tt[(i + 1, i + 1)] -= g;
            a_tt[(i, i + 1)] += g;
            a_tt[(i + 1, i)] += g;
        }
        let mut b_qt = Matrix::zeros(N_SENSORS, N_ZONES);
        for i in 0..N_SENSORS {
            b_qt[(i, i / NODES_PER_ZONE)] = 1.0 / (NODES_PER_ZONE as f64 * c);
        }
        let tp = ThermalParams {
            a_tt,
            b_qt,
            b_t: Vector::new(g_amb.iter().map(|g| g / c).collect())?,
            r_heat: self.r_heat,
            tau_q: self.tau_q.clone(),
            tau_p: self.tau_p.clone(),
            mu_p: self.mu_p.clone(),
            tau_f: self.tau_f.clone(),
            mu_f: self.mu_f.clone(),
            t_s: self.t_s,
            t_a: self.t_a,
        };
        tp.validate()?;
        Ok(tp)
    }
}

impl Default for ThermalTemplate {
    /// Reference plant used for the synthetic benchmark. Ambient conductances
    /// of 8-14 W/K and neighbour conductances of 15-24 W/K, with a weaker
    /// 10 W/K link between the zones; 400 V across 40 Ω gives 4 kW per
    /// resistor. The slowest circuit mode is about 180 s, heat filters
    /// 90-120 s, pack filters 70-200 s and fan filters 60-170 s, so the
    /// slowest discrete pole is about 0.86.
    ///
    /// A network meeting the stability condition with 5 % margin forgets at
    /// least as fast as 0.95 per step and cannot follow modes much slower
    /// than about 20 samples; the time constants are kept below that.
    fn default() -> Self {
        let g_amb = [12.0, 9.0, 10.0, 11.0, 8.5, 13.0, 14.0, 9.5, 10.5, 8.0, 12.5, 11.0];
        let g_couple = [20.0, 18.0, 22.0, 16.0, 24.0, 10.0, 19.0, 21.0, 17.0, 23.0, 15.0];
        Self {
            capacitance: 2000.0,
            r_amb: g_amb.iter().map(|g| 1.0 / g).collect(),
            r_couple: g_couple.iter().map(|g| 1.0 / g).collect(),
            r_heat: 40.0,
            tau_q: vec![90.0, 120.0],
            tau_p: vec![70.0, 80.0, 95.0, 105.0, 120.0, 135.0, 140.0, 155.0, 165.0, 180.0, 195.0, 200.0],
            mu_p: vec![-3.0, -3.5, -4.2, -5.0, -5.8, -6.5, -7.0, -7.6, -8.0, -6.8, -5.5, -4.0],
            tau_f: vec![60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0, 130.0, 140.0, 150.0, 160.0, 170.0],
            mu_f: vec![-0.12, -0.1, -0.08, -0.05, -0.02, 0.01, 0.02, 0.04, 0.06, 0.08, 0.05, -0.03],
            t_s: SAMPLE_TIME_S,
            t_a: 22.0,
        }
    }
}

/// Parameters of the default template.
pub fn default_params() -> ThermalParams {
    ThermalTemplate::default().to_params().expect("default template is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_has_74_parameters() {
        assert_eq!(ThermalTemplate::default().free_parameter_count(), 74);
    }

    #[test]
    fn default_circuit_is_hurwitz_with_margin() {
        assert!(default_params().max_real_eigenvalue() <= -1e-4);
    }

    #[test]
    fn circuit_structure() {
        let tp = default_params();
        let a = &tp.a_tt;
        for i in 0..N_SENSORS {
            // strictly diagonally dominant with nonnegative couplings
            let off: f64 = (0..N_SENSORS).filter(|j| *j != i).map(|j| a[(i, j)]).sum();
            assert!(a[(i, i)] < 0.0 && -a[(i, i)] > off);
            assert!((0..N_SENSORS).filter(|j| *j != i).all(|j| a[(i, j)] >= 0.0));
            // uniform ambient temperature is an equilibrium with the heaters off
            assert!((a[(i, i)] + off + tp.b_t[i]).abs() < 1e-15);
        }
        let col_sums: Vec<f64> = (0..N_ZONES).map(|z| (0..N_SENSORS).map(|i| tp.b_qt[(i, z)]).sum()).collect();
        for s in col_sums {
            assert!((s - 1.0 / 2000.0).abs() < 1e-18);
        }
    }

    #[test]
    fn rejects_bad_template() {
        let mut t = ThermalTemplate::default();
        t.r_couple.pop();
        assert!(t.to_params().is_err());
        let mut t = ThermalTemplate::default();
        t.tau_p[3] = 0.0;
        assert!(t.to_params().is_err());
    }
}

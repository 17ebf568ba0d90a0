//! Minimally invasive safety filter: the nominal inputs are projected onto
//! the set allowed by the barrier constraints and the actuator box.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hocbf::{constraint_coefficients, CbfConfig, CbfConstraint};
use crate::margin_net::MlpParams;
use crate::qp::{solve_qp, LinearConstraint, QpProblem, QpSolution, QpStatus};
use crate::vehicle::{ControlInput, VehicleParams, VehicleState};

/// Which inputs the filter may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterScope {
    /// Both robots' inputs are decision variables.
    Joint,
    /// Only robot `i` is filtered; robot `j` keeps its nominal input.
    EgoOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairFiltered {
    pub solution: QpSolution,
    pub constraint: CbfConstraint,
    /// Wall time spent inside the QP solver.
    pub qp_seconds: f64,
}

impl PairFiltered {
    pub fn inputs(&self) -> (ControlInput, ControlInput) {
        let u = &self.solution.u;
        (ControlInput::new(u[0], u[1]), ControlInput::new(u[2], u[3]))
    }
}

fn stacked_bounds(params: &VehicleParams, robots: usize) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = (params.input_min(), params.input_max());
    let u_min = (0..robots).flat_map(|_| [lo.accel, lo.steer_rate]).collect();
    let u_max = (0..robots).flat_map(|_| [hi.accel, hi.steer_rate]).collect();
    (u_min, u_max)
}

fn check_status(solution: &QpSolution) -> Result<()> {
    if solution.status == QpStatus::Error {
        return Err(Error::Qp(solution.diagnostics.clone().unwrap_or_default()));
    }
    Ok(())
}

/// Pair filter with identity weighting.
pub fn filter_pair(
    state_i: &VehicleState,
    state_j: &VehicleState,
    u_nom: &[f64; 4],
    config: &CbfConfig,
    net: Option<&MlpParams>,
    params: &VehicleParams,
    scope: FilterScope,
) -> Result<PairFiltered> {
    filter_pair_weighted(state_i, state_j, u_nom, config, net, params, scope, &DMatrix::identity(4, 4))
}

#[allow(clippy::too_many_arguments)]
pub fn filter_pair_weighted(
    state_i: &VehicleState,
    state_j: &VehicleState,
    u_nom: &[f64; 4],
    config: &CbfConfig,
    net: Option<&MlpParams>,
    params: &VehicleParams,
    scope: FilterScope,
    q: &DMatrix<f64>,
) -> Result<PairFiltered> {
    if !(state_i.is_finite() && state_j.is_finite()) {
        return Err(Error::InvalidParams("non-finite vehicle state".into()));
    }
    let constraint = constraint_coefficients(state_i, state_j, config, net, params)?;
    let (u_min, u_max) = stacked_bounds(params, 2);
    let mut problem = QpProblem::new(u_nom.to_vec(), u_min, u_max);
    problem.q = q.clone();
    problem.constraints.push(LinearConstraint::new(constraint.a.to_vec(), constraint.b));
    if scope == FilterScope::EgoOnly {
        problem.free_mask = vec![true, true, false, false];
    }
    let started = Instant::now();
    let solution = solve_qp(&problem);
    let qp_seconds = started.elapsed().as_secs_f64();
    check_status(&solution)?;
    Ok(PairFiltered { solution, constraint, qp_seconds })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetFiltered {
    pub inputs: Vec<ControlInput>,
    pub solution: QpSolution,
    /// One entry per unordered pair `(i, j)`, `i < j`, in lexicographic order.
    pub constraints: Vec<((usize, usize), CbfConstraint)>,
}

/// One centralized QP over all robots' inputs with a barrier constraint for
/// every unordered pair. Each pair uses `config`'s margin mode.
pub fn filter_fleet(
    states: &[VehicleState],
    u_noms: &[ControlInput],
    config: &CbfConfig,
    net: Option<&MlpParams>,
    params: &VehicleParams,
) -> Result<FleetFiltered> {
    let k = states.len();
    if k < 2 || u_noms.len() != k {
        return Err(Error::InvalidParams(format!(
            "fleet filter needs at least two robots and one nominal input each, got {k} states and {} inputs",
            u_noms.len()
        )));
    }
    if states.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParams("non-finite vehicle state".into()));
    }
    let u_nom: Vec<f64> = u_noms.iter().flat_map(|u| u.as_array()).collect();
    let (u_min, u_max) = stacked_bounds(params, k);
    let mut problem = QpProblem::new(u_nom, u_min, u_max);
    let mut constraints = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let c = constraint_coefficients(&states[i], &states[j], config, net, params)?;
            let mut a = vec![0.0; 2 * k];
            a[2 * i..2 * i + 2].copy_from_slice(&c.a[..2]);
            a[2 * j..2 * j + 2].copy_from_slice(&c.a[2..]);
            problem.constraints.push(LinearConstraint::new(a, c.b));
            constraints.push(((i, j), c));
        }
    }
    let solution = solve_qp(&problem);
    check_status(&solution)?;
    let inputs = solution.u.chunks(2).map(|u| ControlInput::new(u[0], u[1])).collect();
    Ok(FleetFiltered { inputs, solution, constraints })
}

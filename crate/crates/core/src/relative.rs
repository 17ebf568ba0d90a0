//! Pose of robot `j` seen from robot `i`'s body frame, with first and second
//! time derivatives along the joint bicycle dynamics.
//!
//! The second derivative is affine in the stacked input
//! `u = (accel_i, steer_rate_i, accel_j, steer_rate_j)` and is returned in
//! that form so the barrier constraint can be assembled without
//! re-evaluating the dynamics.

use crate::error::Result;
use crate::vehicle::{pose_accel, pose_rates, ControlInput, VehicleParams, VehicleState};
use crate::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativeState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl RelativeState {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self { x, y, psi: wrap_angle(psi) }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.psi]
    }

    /// Global-frame offset `p_j - p_i` given the ego heading.
    pub fn global_offset(&self, ego_heading: f64) -> [f64; 2] {
        let (s, c) = ego_heading.sin_cos();
        [c * self.x - s * self.y, s * self.x + c * self.y]
    }
}

/// A scalar that is affine in the stacked four-dimensional input.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Affine4 {
    pub constant: f64,
    pub gain: [f64; 4],
}

impl Affine4 {
    pub fn eval(&self, u: &[f64; 4]) -> f64 {
        self.constant + self.gain.iter().zip(u).map(|(g, x)| g * x).sum::<f64>()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            constant: k * self.constant,
            gain: self.gain.map(|g| k * g),
        }
    }

    fn plus(&self, other: &Self) -> Self {
        Self {
            constant: self.constant + other.constant,
            gain: std::array::from_fn(|n| self.gain[n] + other.gain[n]),
        }
    }

    fn offset(&self, c: f64) -> Self {
        Self {
            constant: self.constant + c,
            ..*self
        }
    }
}

/// Relative acceleration `(x'', y'', psi'')` in the ego frame, one affine
/// row per component.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelativeAccel {
    pub rows: [Affine4; 3],
}

impl RelativeAccel {
    pub fn eval(&self, u: &[f64; 4]) -> [f64; 3] {
        self.rows.map(|r| r.eval(u))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeDerivatives {
    pub first: [f64; 3],
    pub second: [f64; 3],
}

pub fn stack_inputs(input_i: &ControlInput, input_j: &ControlInput) -> [f64; 4] {
    [input_i.accel, input_i.steer_rate, input_j.accel, input_j.steer_rate]
}

pub fn to_ego_frame(state_i: &VehicleState, state_j: &VehicleState) -> RelativeState {
    let (dx, dy) = (state_j.x - state_i.x, state_j.y - state_i.y);
    let (s, c) = state_i.psi.sin_cos();
    RelativeState::new(dx * c + dy * s, -dx * s + dy * c, state_j.psi - state_i.psi)
}

struct PairKinematics {
    sin_i: f64,
    cos_i: f64,
    offset: [f64; 2],
    rel_rate: [f64; 3],
    ego_yaw_rate: f64,
}

fn pair_kinematics(state_i: &VehicleState, state_j: &VehicleState, params: &VehicleParams) -> Result<PairKinematics> {
    let ri = pose_rates(state_i, params)?;
    let rj = pose_rates(state_j, params)?;
    let (sin_i, cos_i) = state_i.psi.sin_cos();
    Ok(PairKinematics {
        sin_i,
        cos_i,
        offset: [state_j.x - state_i.x, state_j.y - state_i.y],
        rel_rate: std::array::from_fn(|n| rj[n] - ri[n]),
        ego_yaw_rate: ri[2],
    })
}

/// Time derivative of [`to_ego_frame`]. The frame rotates with the ego
/// heading, so the rotation terms carry the ego yaw rate.
pub fn ego_first_derivative(state_i: &VehicleState, state_j: &VehicleState, params: &VehicleParams) -> Result<[f64; 3]> {
    let PairKinematics { sin_i: s, cos_i: c, offset: [x, y], rel_rate: [xd, yd, psid], ego_yaw_rate: w } =
        pair_kinematics(state_i, state_j, params)?;
    Ok([
        c * xd - s * x * w + s * yd + c * y * w,
        c * yd - s * y * w - s * xd - c * x * w,
        psid,
    ])
}

/// Second time derivative of [`to_ego_frame`] as an affine function of the
/// stacked input.
pub fn ego_second_derivative_affine(
    state_i: &VehicleState,
    state_j: &VehicleState,
    params: &VehicleParams,
) -> Result<RelativeAccel> {
    let PairKinematics { sin_i: s, cos_i: c, offset: [x, y], rel_rate: [xd, yd, _], ego_yaw_rate: w } =
        pair_kinematics(state_i, state_j, params)?;
    let ai = pose_accel(state_i, params)?;
    let aj = pose_accel(state_j, params)?;

    // global relative accelerations, affine in u
    let rel: [Affine4; 3] = std::array::from_fn(|r| Affine4 {
        constant: aj.drift[r] - ai.drift[r],
        gain: [-ai.gain[r][0], -ai.gain[r][1], aj.gain[r][0], aj.gain[r][1]],
    });
    let ego_yaw_acc = Affine4 {
        constant: ai.drift[2],
        gain: [ai.gain[2][0], ai.gain[2][1], 0.0, 0.0],
    };
    let [xdd, ydd, psidd] = rel;
    let w2 = w * w;

    let row_x = xdd
        .scaled(c)
        .plus(&ydd.scaled(s))
        .plus(&ego_yaw_acc.scaled(-x * s + y * c))
        .offset(-2.0 * s * xd * w - x * c * w2 + 2.0 * c * yd * w - y * s * w2);
    let row_y = ydd
        .scaled(c)
        .plus(&xdd.scaled(-s))
        .plus(&ego_yaw_acc.scaled(-y * s - x * c))
        .offset(-2.0 * s * yd * w - y * c * w2 - 2.0 * c * xd * w + x * s * w2);

    Ok(RelativeAccel { rows: [row_x, row_y, psidd] })
}

pub fn ego_second_derivative(
    state_i: &VehicleState,
    state_j: &VehicleState,
    input_i: &ControlInput,
    input_j: &ControlInput,
    params: &VehicleParams,
) -> Result<[f64; 3]> {
    Ok(ego_second_derivative_affine(state_i, state_j, params)?.eval(&stack_inputs(input_i, input_j)))
}

pub fn relative_derivatives(
    state_i: &VehicleState,
    state_j: &VehicleState,
    input_i: &ControlInput,
    input_j: &ControlInput,
    params: &VehicleParams,
) -> Result<RelativeDerivatives> {
    Ok(RelativeDerivatives {
        first: ego_first_derivative(state_i, state_j, params)?,
        second: ego_second_derivative(state_i, state_j, input_i, input_j, params)?,
    })
}

//! Kinematic bicycle model.
//!
//! State `(x, y, psi, v, delta)` with acceleration and steering rate as inputs.
//! The reference point is the center of gravity, so the velocity vector is
//! rotated from the heading by the slip angle `beta = atan(k tan delta)` with
//! `k = l_r / l_wb`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub rear_wheelbase: f64,
    pub length: f64,
    pub width: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub steer_rate_min: f64,
    pub steer_rate_max: f64,
    /// Steering angle saturation applied during integration.
    pub steering_limit: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.16,
            rear_wheelbase: 0.08,
            length: 0.16,
            width: 0.08,
            accel_min: -20.0,
            accel_max: 20.0,
            steer_rate_min: -16.0,
            steer_rate_max: 16.0,
            steering_limit: 1.2,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.wheelbase > 0.0 && self.rear_wheelbase > 0.0 && self.rear_wheelbase <= self.wheelbase) {
            return bad("need 0 < rear_wheelbase <= wheelbase");
        }
        if !(self.length > 0.0 && self.width > 0.0) {
            return bad("length and width must be positive");
        }
        if !(self.accel_min < self.accel_max && self.steer_rate_min < self.steer_rate_max) {
            return bad("input bounds need min < max");
        }
        if !(self.steering_limit > 0.0 && self.steering_limit < FRAC_PI_2) {
            return bad("steering_limit must lie in (0, pi/2)");
        }
        Ok(())
    }

    /// Ratio of rear wheelbase to wheelbase.
    pub fn k(&self) -> f64 {
        self.rear_wheelbase / self.wheelbase
    }

    pub fn input_min(&self) -> ControlInput {
        ControlInput::new(self.accel_min, self.steer_rate_min)
    }

    pub fn input_max(&self) -> ControlInput {
        ControlInput::new(self.accel_max, self.steer_rate_max)
    }

    /// Clamps an input into the actuator box.
    pub fn saturate(&self, u: ControlInput) -> ControlInput {
        ControlInput::new(
            u.accel.clamp(self.accel_min, self.accel_max),
            u.steer_rate.clamp(self.steer_rate_min, self.steer_rate_max),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub delta: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, psi: f64, v: f64, delta: f64) -> Self {
        Self { x, y, psi, v, delta }
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    fn to_array(self) -> [f64; 5] {
        [self.x, self.y, self.psi, self.v, self.delta]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub accel: f64,
    pub steer_rate: f64,
}

impl ControlInput {
    pub fn new(accel: f64, steer_rate: f64) -> Self {
        Self { accel, steer_rate }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.accel, self.steer_rate]
    }
}

fn check_steering(delta: f64) -> Result<()> {
    if delta.abs() < FRAC_PI_2 {
        Ok(())
    } else {
        Err(Error::SteeringDomain { delta })
    }
}

pub fn slip_angle(delta: f64, params: &VehicleParams) -> Result<f64> {
    check_steering(delta)?;
    Ok((params.k() * delta.tan()).atan())
}

/// d(beta)/d(u_delta): the slip-angle rate per unit steering rate.
fn slip_rate_gain(delta: f64, k: f64) -> f64 {
    let sec2 = 1.0 / delta.cos().powi(2);
    let kt = k * delta.tan();
    k * sec2 / (1.0 + kt * kt)
}

pub fn slip_angle_rate(delta: f64, steer_rate: f64, params: &VehicleParams) -> Result<f64> {
    check_steering(delta)?;
    Ok(slip_rate_gain(delta, params.k()) * steer_rate)
}

/// Right-hand side of the bicycle ODE.
pub fn state_derivative(state: &VehicleState, input: &ControlInput, params: &VehicleParams) -> Result<[f64; 5]> {
    let [xd, yd, psid] = pose_rates(state, params)?;
    Ok([xd, yd, psid, input.accel, input.steer_rate])
}

/// First time derivative of the pose `(x, y, psi)`. Independent of the input.
pub fn pose_rates(state: &VehicleState, params: &VehicleParams) -> Result<[f64; 3]> {
    let beta = slip_angle(state.delta, params)?;
    let (s, c) = (state.psi + beta).sin_cos();
    Ok([
        state.v * c,
        state.v * s,
        state.v / params.wheelbase * state.delta.tan() * beta.cos(),
    ])
}

/// Second time derivative of the pose in affine form `drift + gain * u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseAccel {
    pub drift: [f64; 3],
    pub gain: [[f64; 2]; 3],
}

impl PoseAccel {
    pub fn eval(&self, u: &ControlInput) -> [f64; 3] {
        let u = u.as_array();
        std::array::from_fn(|r| self.drift[r] + self.gain[r][0] * u[0] + self.gain[r][1] * u[1])
    }
}

/// Product-rule expansion of the pose rates along the bicycle dynamics,
/// split into the input-free part and the input gain.
pub fn pose_accel(state: &VehicleState, params: &VehicleParams) -> Result<PoseAccel> {
    let VehicleState { psi, v, delta, .. } = *state;
    let beta = slip_angle(delta, params)?;
    let kb = slip_rate_gain(delta, params.k());
    let psi_dot = v / params.wheelbase * delta.tan() * beta.cos();
    let (s, c) = (psi + beta).sin_cos();
    let tan_d = delta.tan();
    let sec2 = 1.0 / delta.cos().powi(2);
    let cb_l = beta.cos() / params.wheelbase;

    Ok(PoseAccel {
        drift: [-v * s * psi_dot, v * c * psi_dot, 0.0],
        gain: [
            [c, -v * s * kb],
            [s, v * c * kb],
            [cb_l * tan_d, cb_l * (v * sec2 - v * beta.tan() * tan_d * kb)],
        ],
    })
}

/// `(x'', y'', psi'')` for the given input.
pub fn pose_second_derivatives(state: &VehicleState, input: &ControlInput, params: &VehicleParams) -> Result<[f64; 3]> {
    Ok(pose_accel(state, params)?.eval(input))
}

fn saturate_steering(mut a: [f64; 5], limit: f64) -> [f64; 5] {
    a[4] = a[4].clamp(-limit, limit);
    a
}

/// One classical fourth-order Runge-Kutta step with the input held constant.
/// Steering is saturated at `params.steering_limit` in every stage and in the
/// result; the heading is wrapped into `(-pi, pi]`.
pub fn integrate_step(state: &VehicleState, input: &ControlInput, dt: f64, params: &VehicleParams) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
    }
    check_steering(state.delta)?;
    let limit = params.steering_limit;
    let x0 = state.to_array();
    let f = |a: [f64; 5]| state_derivative(&VehicleState::from_array(saturate_steering(a, limit)), input, params);
    let axpy = |h: f64, k: &[f64; 5]| -> [f64; 5] { std::array::from_fn(|n| x0[n] + h * k[n]) };

    let k1 = f(x0)?;
    let k2 = f(axpy(0.5 * dt, &k1))?;
    let k3 = f(axpy(0.5 * dt, &k2))?;
    let k4 = f(axpy(dt, &k3))?;
    let next: [f64; 5] = std::array::from_fn(|n| x0[n] + dt / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]));
    let mut s = VehicleState::from_array(saturate_steering(next, limit));
    s.psi = wrap_angle(s.psi);
    Ok(s)
}

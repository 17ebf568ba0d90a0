//! Collision-unaware pure-pursuit waypoint follower.

use serde::{Deserialize, Serialize};

use crate::vehicle::{ControlInput, VehicleParams, VehicleState};
use crate::wrap_angle;

/// Polyline reference, followed from the first point to the last.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    points: Vec<[f64; 2]>,
}

impl ReferencePath {
    /// `None` for fewer than two points or repeated consecutive points.
    pub fn new(points: Vec<[f64; 2]>) -> Option<Self> {
        let ok = points.len() >= 2 && points.windows(2).all(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) > 0.0);
        ok.then_some(Self { points })
    }

    /// Straight line `Y = y` traversed in the `+x` (`direction > 0`) or `-x`
    /// direction, long enough for any scenario here.
    pub fn horizontal(y: f64, direction: f64) -> Self {
        let s = direction.signum();
        Self {
            points: vec![[-100.0 * s, y], [100.0 * s, y]],
        }
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// Point `lookahead` meters of arc past the projection of `(x, y)`.
    pub fn lookahead_point(&self, x: f64, y: f64, lookahead: f64) -> [f64; 2] {
        // closest segment
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for (n, w) in self.points.windows(2).enumerate() {
            let (d, len) = ([w[1][0] - w[0][0], w[1][1] - w[0][1]], (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
            let t = (((x - w[0][0]) * d[0] + (y - w[0][1]) * d[1]) / (len * len)).clamp(0.0, 1.0);
            let p = [w[0][0] + t * d[0], w[0][1] + t * d[1]];
            let dist = (x - p[0]).hypot(y - p[1]);
            if dist < best.0 {
                best = (dist, n, t * len);
            }
        }
        let (_, mut seg, mut along) = best;
        let mut remaining = lookahead;
        loop {
            let (a, b) = (self.points[seg], self.points[seg + 1]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if along + remaining <= len || seg + 2 == self.points.len() {
                let t = (along + remaining) / len;
                return [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            }
            remaining -= len - along;
            along = 0.0;
            seg += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PursuitGains {
    pub lookahead: f64,
    /// Proportional gain on the speed error, 1/s.
    pub speed_gain: f64,
    /// Proportional gain on the steering-angle error, 1/s.
    pub steer_gain: f64,
}

impl Default for PursuitGains {
    fn default() -> Self {
        Self {
            lookahead: 0.3,
            speed_gain: 5.0,
            steer_gain: 10.0,
        }
    }
}

/// Pure-pursuit steering toward the lookahead point plus proportional speed
/// tracking, clamped to the actuator box.
pub fn nominal_controller(
    state: &VehicleState,
    path: &ReferencePath,
    target_speed: f64,
    gains: &PursuitGains,
    params: &VehicleParams,
) -> ControlInput {
    let goal = path.lookahead_point(state.x, state.y, gains.lookahead);
    let (dx, dy) = (goal[0] - state.x, goal[1] - state.y);
    let alpha = wrap_angle(dy.atan2(dx) - state.psi);
    let distance = dx.hypot(dy).max(1e-9);
    let curvature = 2.0 * alpha.sin() / distance;
    let limit = params.steering_limit;
    let delta_ref = (curvature * params.wheelbase).atan().clamp(-limit, limit);
    params.saturate(ControlInput::new(
        gains.speed_gain * (target_speed - state.v),
        gains.steer_gain * (delta_ref - state.delta),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::integrate_step;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn on_path_at_speed_is_idle() {
        let path = ReferencePath::horizontal(0.0, 1.0);
        let s = VehicleState::new(0.3, 0.0, 0.0, 1.0, 0.0);
        let u = nominal_controller(&s, &path, 1.0, &PursuitGains::default(), &params());
        assert!(u.accel.abs() < 1e-12 && u.steer_rate.abs() < 1e-12);
    }

    #[test]
    fn slow_vehicle_accelerates_straight() {
        let path = ReferencePath::horizontal(0.0, 1.0);
        let s = VehicleState::new(0.0, 0.0, 0.0, 0.2, 0.0);
        let u = nominal_controller(&s, &path, 1.0, &PursuitGains::default(), &params());
        assert!((u.accel - 4.0).abs() < 1e-12);
        assert!(u.steer_rate.abs() < 1e-12);
    }

    #[test]
    fn leftward_path_is_followed_backwards() {
        let path = ReferencePath::horizontal(0.0, -1.0);
        let s = VehicleState::new(0.0, 0.05, std::f64::consts::PI, 1.0, 0.0);
        let u = nominal_controller(&s, &path, 1.0, &PursuitGains::default(), &params());
        // heading -x with the path on the vehicle's left: steer left
        assert!(u.steer_rate > 0.0);
    }

    #[test]
    fn inputs_are_clamped() {
        let path = ReferencePath::horizontal(0.0, 1.0);
        let s = VehicleState::new(0.0, 0.0, 0.0, -10.0, 0.0);
        let u = nominal_controller(&s, &path, 1.0, &PursuitGains::default(), &params());
        assert_eq!(u.accel, params().accel_max);
    }

    #[test]
    fn lateral_offset_converges_within_two_meters() {
        let p = params();
        let path = ReferencePath::horizontal(0.0, 1.0);
        let gains = PursuitGains::default();
        let mut s = VehicleState::new(0.0, 0.1, 0.0, 1.0, 0.0);
        let first = nominal_controller(&s, &path, 1.0, &gains, &p);
        assert!(first.steer_rate < 0.0, "should steer toward the path");
        while s.x < 2.0 {
            let u = nominal_controller(&s, &path, 1.0, &gains, &p);
            s = integrate_step(&s, &u, 0.01, &p).unwrap();
        }
        assert!(s.y.abs() < 0.005, "offset left after 2 m: {}", s.y);
        assert!(s.psi.abs() < 0.05);
    }

    #[test]
    fn lookahead_walks_polyline_corners() {
        let path = ReferencePath::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]).unwrap();
        let p = path.lookahead_point(0.9, 0.0, 0.3);
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12);
        // past the end: clamps onto the extension of the last segment
        let end = path.lookahead_point(1.0, 1.0, 0.5);
        assert!((end[1] - 1.5).abs() < 1e-12);
        assert!(ReferencePath::new(vec![[0.0, 0.0]]).is_none());
        assert!(ReferencePath::new(vec![[0.0, 0.0], [0.0, 0.0]]).is_none());
    }
}

//! Second-order control barrier function on the relative pose.
//!
//! With `alpha(h) = k h` for both class-K functions the constraint is
//! `psi2 = h'' + 2k h' + k^2 h >= 0`, which is affine in the stacked input
//! `u = (accel_i, steer_i, accel_j, steer_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{c2c_margin, enclosing_radius};
use crate::margin_net::{evaluate, Evaluation, MlpParams};
use crate::relative::{ego_first_derivative, ego_second_derivative_affine, to_ego_frame, RelativeState};
use crate::vehicle::{VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginMode {
    Learned,
    C2c,
    /// Learned inside `hybrid_range`, circle-to-circle outside.
    Hybrid,
}

impl MarginMode {
    pub fn name(&self) -> &'static str {
        match self {
            MarginMode::Learned => "learned",
            MarginMode::C2c => "c2c",
            MarginMode::Hybrid => "hybrid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbfConfig {
    pub k_alpha: f64,
    /// Bound on the network's approximation error, subtracted from its output.
    pub epsilon: f64,
    pub margin_mode: MarginMode,
    pub hybrid_range: f64,
}

impl CbfConfig {
    pub fn new(k_alpha: f64, epsilon: f64, margin_mode: MarginMode, params: &VehicleParams) -> Result<Self> {
        let config = Self {
            k_alpha,
            epsilon,
            margin_mode,
            hybrid_range: 3.0 * params.wheelbase,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_alpha > 0.0 && self.k_alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("k_alpha must be positive, got {}", self.k_alpha)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if !(self.hybrid_range > 0.0) {
            return Err(Error::InvalidConfig(format!("hybrid_range must be positive, got {}", self.hybrid_range)));
        }
        Ok(())
    }
}

/// `psi2(u) = a . u + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfConstraint {
    pub a: [f64; 4],
    pub b: f64,
    pub h: f64,
    pub h_dot: f64,
    /// Either `Learned` or `C2c`, never `Hybrid`.
    pub mode_used: MarginMode,
}

impl CbfConstraint {
    pub fn eval(&self, u: &[f64; 4]) -> f64 {
        self.a.iter().zip(u).map(|(a, u)| a * u).sum::<f64>() + self.b
    }
}

pub fn hybrid_select(rel: &RelativeState, config: &CbfConfig) -> MarginMode {
    if rel.x.abs() <= config.hybrid_range && rel.y.abs() <= config.hybrid_range {
        MarginMode::Learned
    } else {
        MarginMode::C2c
    }
}

fn resolve_mode(rel: &RelativeState, config: &CbfConfig) -> MarginMode {
    match config.margin_mode {
        MarginMode::Hybrid => hybrid_select(rel, config),
        mode => mode,
    }
}

/// Gradient and Hessian of the circle-to-circle margin. The margin does not
/// depend on the relative heading.
pub fn c2c_barrier_derivatives(rel: &RelativeState) -> Result<([f64; 3], [[f64; 3]; 3])> {
    let d = rel.x.hypot(rel.y);
    if !(d > 0.0) {
        return Err(Error::CoincidentCenters);
    }
    let (ux, uy) = (rel.x / d, rel.y / d);
    let gradient = [ux, uy, 0.0];
    let hessian = [
        [uy * uy / d, -ux * uy / d, 0.0],
        [-ux * uy / d, ux * ux / d, 0.0],
        [0.0, 0.0, 0.0],
    ];
    Ok((gradient, hessian))
}

fn margin_expansion(
    rel: &RelativeState,
    mode: MarginMode,
    net: Option<&MlpParams>,
    params: &VehicleParams,
) -> Result<Evaluation> {
    match mode {
        MarginMode::C2c => {
            let (gradient, hessian) = c2c_barrier_derivatives(rel)?;
            Ok(Evaluation {
                value: c2c_margin(rel.x, rel.y, params.length, params.width),
                gradient,
                hessian,
            })
        }
        _ => {
            let net = net.ok_or(Error::MissingModel)?;
            let p = rel.as_array();
            if !net.trained_range.contains(&p) {
                return Err(Error::OutOfTrainedRange { x: rel.x, y: rel.y, psi: rel.psi });
            }
            Ok(evaluate(net, &p))
        }
    }
}

fn barrier_offset(mode: MarginMode, config: &CbfConfig) -> f64 {
    match mode {
        MarginMode::C2c => 0.0,
        _ => config.epsilon,
    }
}

/// `h = h_theta - epsilon` for the learned margin, the exact circle margin
/// otherwise.
pub fn barrier_value(
    rel: &RelativeState,
    config: &CbfConfig,
    net: Option<&MlpParams>,
    params: &VehicleParams,
) -> Result<f64> {
    let mode = resolve_mode(rel, config);
    if mode == MarginMode::C2c {
        return Ok(c2c_margin(rel.x, rel.y, params.length, params.width));
    }
    let net = net.ok_or(Error::MissingModel)?;
    let p = rel.as_array();
    if !net.trained_range.contains(&p) {
        return Err(Error::OutOfTrainedRange { x: rel.x, y: rel.y, psi: rel.psi });
    }
    Ok(crate::margin_net::forward(net, &p) - config.epsilon)
}

pub fn barrier_rate(
    state_i: &VehicleState,
    state_j: &VehicleState,
    config: &CbfConfig,
    net: Option<&MlpParams>,
    params: &VehicleParams,
) -> Result<f64> {
    let rel = to_ego_frame(state_i, state_j);
    let ev = margin_expansion(&rel, resolve_mode(&rel, config), net, params)?;
    let rate = ego_first_derivative(state_i, state_j, params)?;
    Ok(dot3(&ev.gradient, &rate))
}

/// First link of the chain, `psi1 = h' + k h`.
pub fn psi1(
    state_i: &VehicleState,
    state_j: &VehicleState,
    config: &CbfConfig,
    net: Option<&MlpParams>,
    params: &VehicleParams,
) -> Result<f64> {
    let c = constraint_coefficients(state_i, state_j, config, net, params)?;
    Ok(c.h_dot + config.k_alpha * c.h)
}

pub fn constraint_coefficients(
    state_i: &VehicleState,
    state_j: &VehicleState,
    config: &CbfConfig,
    net: Option<&MlpParams>,
    params: &VehicleParams,
) -> Result<CbfConstraint> {
    let rel = to_ego_frame(state_i, state_j);
    let mode = resolve_mode(&rel, config);
    let ev = margin_expansion(&rel, mode, net, params)?;
    let rate = ego_first_derivative(state_i, state_j, params)?;
    let accel = ego_second_derivative_affine(state_i, state_j, params)?;

    let k = config.k_alpha;
    let h = ev.value - barrier_offset(mode, config);
    let h_dot = dot3(&ev.gradient, &rate);
    let curvature: f64 = (0..3)
        .map(|p| (0..3).map(|q| rate[p] * ev.hessian[p][q] * rate[q]).sum::<f64>())
        .sum();
    let a = std::array::from_fn(|n| (0..3).map(|r| ev.gradient[r] * accel.rows[r].gain[n]).sum());
    let drift: f64 = (0..3).map(|r| ev.gradient[r] * accel.rows[r].constant).sum();

    Ok(CbfConstraint {
        a,
        b: drift + curvature + 2.0 * k * h_dot + k * k * h,
        h,
        h_dot,
        mode_used: mode,
    })
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Radius used by the circle baseline, re-exported for callers that report
/// both margins.
pub fn c2c_radius(params: &VehicleParams) -> f64 {
    enclosing_radius(params.length, params.width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margin_net::{forward, gradient, InputBox, DEFAULT_LAYER_DIMS};
    use crate::relative::ego_second_derivative;
    use crate::vehicle::{integrate_step, ControlInput};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    /// A smooth random network scaled down so its output looks like a margin.
    fn net() -> MlpParams {
        let mut net = MlpParams::init(&DEFAULT_LAYER_DIMS, InputBox::for_vehicle(&params()), 11);
        net.layers.last_mut().unwrap().weights.mapv_inplace(|w| 0.05 * w);
        net
    }

    fn config(mode: MarginMode) -> CbfConfig {
        CbfConfig::new(3.0, 0.01, mode, &params()).unwrap()
    }

    fn random_pair(rng: &mut impl Rng) -> (VehicleState, VehicleState, [f64; 4]) {
        let i = VehicleState::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(0.0..1.5),
            rng.random_range(-0.6..0.6),
        );
        let (s, c) = i.psi.sin_cos();
        let (rx, ry) = (rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
        let j = VehicleState::new(
            i.x + c * rx - s * ry,
            i.y + s * rx + c * ry,
            rng.random_range(-3.0..3.0),
            rng.random_range(0.0..1.5),
            rng.random_range(-0.6..0.6),
        );
        let u = [
            rng.random_range(-5.0..5.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-3.0..3.0),
        ];
        (i, j, u)
    }

    fn barrier_along(
        i: &VehicleState,
        j: &VehicleState,
        u: &[f64; 4],
        dt: f64,
        steps: usize,
        cfg: &CbfConfig,
        net: &MlpParams,
    ) -> Vec<f64> {
        let p = params();
        let (ui, uj) = (ControlInput::new(u[0], u[1]), ControlInput::new(u[2], u[3]));
        let (mut i, mut j) = (*i, *j);
        let mut out = Vec::with_capacity(steps + 1);
        for n in 0..=steps {
            out.push(barrier_value(&to_ego_frame(&i, &j), cfg, Some(net), &p).unwrap());
            if n < steps {
                i = integrate_step(&i, &ui, dt, &p).unwrap();
                j = integrate_step(&j, &uj, dt, &p).unwrap();
            }
        }
        out
    }

    #[test]
    fn zero_epsilon_is_raw_network() {
        let net = net();
        let cfg = CbfConfig { epsilon: 0.0, ..config(MarginMode::Learned) };
        let rel = RelativeState::new(0.2, -0.1, 0.4);
        assert_eq!(barrier_value(&rel, &cfg, Some(&net), &params()).unwrap(), forward(&net, &rel.as_array()));
    }

    #[test]
    fn c2c_value_example() {
        let cfg = config(MarginMode::C2c);
        let h = barrier_value(&RelativeState::new(0.5, 0.0, 1.0), &cfg, None, &params()).unwrap();
        assert!((h - 0.321115).abs() < 1e-6);
    }

    #[test]
    fn learned_mode_rejects_out_of_range_and_missing_model() {
        let cfg = config(MarginMode::Learned);
        let far = RelativeState::new(1.0, 0.0, 0.0);
        assert!(matches!(barrier_value(&far, &cfg, Some(&net()), &params()), Err(Error::OutOfTrainedRange { .. })));
        let near = RelativeState::new(0.1, 0.0, 0.0);
        assert!(matches!(barrier_value(&near, &cfg, None, &params()), Err(Error::MissingModel)));
        let hybrid = config(MarginMode::Hybrid);
        assert!(barrier_value(&far, &hybrid, Some(&net()), &params()).is_ok());
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(CbfConfig::new(0.0, 0.0, MarginMode::C2c, &params()).is_err());
        assert!(CbfConfig::new(1.0, -0.1, MarginMode::C2c, &params()).is_err());
    }

    #[test]
    fn hybrid_selection() {
        let cfg = config(MarginMode::Hybrid);
        assert!((cfg.hybrid_range - 0.48).abs() < 1e-15);
        assert_eq!(hybrid_select(&RelativeState::new(0.1, 0.1, 0.0), &cfg), MarginMode::Learned);
        assert_eq!(hybrid_select(&RelativeState::new(1.0, 0.0, 0.0), &cfg), MarginMode::C2c);
        assert_eq!(hybrid_select(&RelativeState::new(0.48, 0.0, 0.0), &cfg), MarginMode::Learned);
        assert_eq!(hybrid_select(&RelativeState::new(0.0, -0.48, 0.0), &cfg), MarginMode::Learned);
        assert_eq!(hybrid_select(&RelativeState::new(0.3, 0.49, 0.0), &cfg), MarginMode::C2c);
        // the boundary pose is inside the learned network's domain
        let h = barrier_value(&RelativeState::new(0.48, 0.0, 0.0), &cfg, Some(&net()), &params());
        assert!(h.is_ok());
    }

    #[test]
    fn c2c_derivative_examples() {
        let (g, _) = c2c_barrier_derivatives(&RelativeState::new(0.7, 0.0, 2.0)).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-15 && g[1].abs() < 1e-15 && g[2] == 0.0);
        assert!(matches!(c2c_barrier_derivatives(&RelativeState::new(0.0, 0.0, 1.0)), Err(Error::CoincidentCenters)));
    }

    #[test]
    fn c2c_hessian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let step = 1e-6;
        for _ in 0..100 {
            let (x, y): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            if x.hypot(y) < 0.05 {
                continue;
            }
            let (g, hess) = c2c_barrier_derivatives(&RelativeState::new(x, y, 0.0)).unwrap();
            assert!((g[0].hypot(g[1]) - 1.0).abs() < 1e-14);
            for d in 0..2 {
                let mut plus = [x, y];
                let mut minus = [x, y];
                plus[d] += step;
                minus[d] -= step;
                let (gp, _) = c2c_barrier_derivatives(&RelativeState::new(plus[0], plus[1], 0.0)).unwrap();
                let (gm, _) = c2c_barrier_derivatives(&RelativeState::new(minus[0], minus[1], 0.0)).unwrap();
                for r in 0..3 {
                    let fd = (gp[r] - gm[r]) / (2.0 * step);
                    assert!((hess[r][d] - fd).abs() <= 1e-6 * hess[r][d].abs().max(1.0), "{x} {y} {r} {d}");
                }
            }
            assert_eq!(hess[2], [0.0; 3]);
        }
    }

    #[test]
    fn stationary_and_superimposed_rates_vanish() {
        let net = net();
        let cfg = config(MarginMode::Learned);
        let i = VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.1);
        let j = VehicleState::new(0.2, 0.1, 0.5, 0.0, -0.2);
        assert_eq!(barrier_rate(&i, &j, &cfg, Some(&net), &params()).unwrap(), 0.0);
        let moving = VehicleState::new(0.3, -0.2, 1.1, 0.8, 0.3);
        assert!(barrier_rate(&moving, &moving, &cfg, Some(&net), &params()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn at_rest_constraint_is_k_squared_h() {
        let net = net();
        let cfg = config(MarginMode::Learned);
        let i = VehicleState::new(0.0, 0.0, 0.3, 0.0, 0.0);
        let j = VehicleState::new(0.25, 0.05, -0.4, 0.0, 0.0);
        let c = constraint_coefficients(&i, &j, &cfg, Some(&net), &params()).unwrap();
        assert_eq!(c.h_dot, 0.0);
        assert!((c.eval(&[0.0; 4]) - 9.0 * c.h).abs() < 1e-15);
    }

    #[test]
    fn rate_matches_trajectory_finite_difference() {
        let net = net();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mode in [MarginMode::Learned, MarginMode::C2c] {
            let cfg = config(mode);
            for _ in 0..50 {
                let (i, j, u) = random_pair(&mut rng);
                let rate = barrier_rate(&i, &j, &cfg, Some(&net), &params()).unwrap();
                let dt = 1e-4;
                let h = barrier_along(&i, &j, &u, dt, 2, &cfg, &net);
                let fd = (-3.0 * h[0] + 4.0 * h[1] - h[2]) / (2.0 * dt);
                assert!((rate - fd).abs() <= 1e-3 * rate.abs().max(1e-2), "{rate} vs {fd}");
            }
        }
    }

    #[test]
    fn constraint_matches_trajectory_finite_difference() {
        let net = net();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for mode in [MarginMode::Learned, MarginMode::C2c] {
            let cfg = config(mode);
            let k = cfg.k_alpha;
            for _ in 0..50 {
                let (i, j, u) = random_pair(&mut rng);
                let rel = to_ego_frame(&i, &j);
                if mode == MarginMode::C2c && rel.x.hypot(rel.y) < 0.1 {
                    // third derivatives blow up near coincident centers
                    continue;
                }
                let c = constraint_coefficients(&i, &j, &cfg, Some(&net), &params()).unwrap();
                let dt = 1e-3;
                let h = barrier_along(&i, &j, &u, dt, 3, &cfg, &net);
                let h_dd = (2.0 * h[0] - 5.0 * h[1] + 4.0 * h[2] - h[3]) / (dt * dt);
                let h_d = (-3.0 * h[0] + 4.0 * h[1] - h[2]) / (2.0 * dt);
                let chain = h_dd + 2.0 * k * h_d + k * k * h[0];
                let psi2 = c.eval(&u);
                assert!((psi2 - chain).abs() <= 1e-3 * psi2.abs().max(1.0), "{psi2} vs {chain} {mode:?} {rel:?}");
            }
        }
    }

    #[test]
    fn psi_chain_is_consistent_along_trajectories() {
        let net = net();
        let p = params();
        let cfg = config(MarginMode::Learned);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let (i, j, u) = random_pair(&mut rng);
            let (ui, uj) = (ControlInput::new(u[0], u[1]), ControlInput::new(u[2], u[3]));
            let dt = 1e-4;
            let i1 = integrate_step(&i, &ui, dt, &p).unwrap();
            let j1 = integrate_step(&j, &uj, dt, &p).unwrap();
            let i2 = integrate_step(&i1, &ui, dt, &p).unwrap();
            let j2 = integrate_step(&j1, &uj, dt, &p).unwrap();
            let p0 = psi1(&i, &j, &cfg, Some(&net), &p).unwrap();
            let p1 = psi1(&i1, &j1, &cfg, Some(&net), &p).unwrap();
            let p2 = psi1(&i2, &j2, &cfg, Some(&net), &p).unwrap();
            let psi1_dot = (-3.0 * p0 + 4.0 * p1 - p2) / (2.0 * dt);
            let psi2 = constraint_coefficients(&i, &j, &cfg, Some(&net), &p).unwrap().eval(&u);
            let chained = psi1_dot + cfg.k_alpha * p0;
            assert!((psi2 - chained).abs() <= 1e-3 * psi2.abs().max(1.0), "{psi2} vs {chained}");
        }
    }

    #[test]
    fn epsilon_shift_moves_only_h_terms() {
        let net = net();
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (i, j, _) = random_pair(&mut rng);
            let base = config(MarginMode::Learned);
            let shifted = CbfConfig { epsilon: base.epsilon + 0.02, ..base };
            let c0 = constraint_coefficients(&i, &j, &base, Some(&net), &p).unwrap();
            let c1 = constraint_coefficients(&i, &j, &shifted, Some(&net), &p).unwrap();
            assert!((c0.h - c1.h - 0.02).abs() < 1e-15);
            assert_eq!(c0.a, c1.a);
            assert_eq!(c0.h_dot, c1.h_dot);
            let k2 = base.k_alpha * base.k_alpha;
            assert!((c0.b - c1.b - k2 * 0.02).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_form_matches_chained_evaluation() {
        let net = net();
        let p = params();
        let cfg = config(MarginMode::Hybrid);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let (i, j, u) = random_pair(&mut rng);
            let c = constraint_coefficients(&i, &j, &cfg, Some(&net), &p).unwrap();
            // independent path: gradient by reverse mode, acceleration by
            // direct evaluation at u
            let rel = to_ego_frame(&i, &j);
            let g = gradient(&net, &rel.as_array());
            let rate = ego_first_derivative(&i, &j, &p).unwrap();
            let acc = ego_second_derivative(
                &i,
                &j,
                &ControlInput::new(u[0], u[1]),
                &ControlInput::new(u[2], u[3]),
                &p,
            )
            .unwrap();
            let hess = crate::margin_net::hessian(&net, &rel.as_array());
            let quad: f64 = (0..3).map(|a| (0..3).map(|b| rate[a] * hess[a][b] * rate[b]).sum::<f64>()).sum();
            let h = forward(&net, &rel.as_array()) - cfg.epsilon;
            let h_dot = dot3(&g, &rate);
            let k = cfg.k_alpha;
            let chained = dot3(&g, &acc) + quad + 2.0 * k * h_dot + k * k * h;
            let affine = c.eval(&u);
            assert!((affine - chained).abs() <= 1e-9 * chained.abs().max(1.0), "{affine} vs {chained}");
        }
    }

    #[test]
    fn c2c_mode_ignores_epsilon_and_network() {
        let p = params();
        let i = VehicleState::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let j = VehicleState::new(0.6, 0.1, 3.0, 0.5, 0.1);
        let c = constraint_coefficients(&i, &j, &config(MarginMode::C2c), None, &p).unwrap();
        assert_eq!(c.mode_used, MarginMode::C2c);
        assert!((c.h - (0.6f64.hypot(0.1) - 2.0 * c2c_radius(&p))).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn constraint_is_affine_in_input(
            seed in any::<u64>(),
            u1 in prop::array::uniform4(-10.0f64..10.0),
            u2 in prop::array::uniform4(-10.0f64..10.0),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (i, j, _) = random_pair(&mut rng);
            let c = constraint_coefficients(&i, &j, &config(MarginMode::Hybrid), Some(&net()), &params()).unwrap();
            let sum: [f64; 4] = std::array::from_fn(|n| u1[n] + u2[n]);
            let zero = c.eval(&[0.0; 4]);
            let lhs = c.eval(&sum) - zero;
            let rhs = (c.eval(&u1) - zero) + (c.eval(&u2) - zero);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}

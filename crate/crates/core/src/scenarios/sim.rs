//! Fixed-step closed loop: nominal inputs, barrier constraint, safety filter,
//! integration.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nominal::{nominal_controller, ReferencePath};
use super::script::{BypassScript, ObstructionScript};
use super::{ScenarioConfig, ScenarioKind};
use crate::error::{Error, Result};
use crate::filter::filter_pair;
use crate::geometry::{c2c_margin, mtv_margin, OrientedRectangle};
use crate::hocbf::{constraint_coefficients, MarginMode};
use crate::margin_net::MlpParams;
use crate::qp::QpStatus;
use crate::relative::{stack_inputs, to_ego_frame};
use crate::vehicle::{integrate_step, VehicleParams, VehicleState};

pub const CSV_COLUMNS: [&str; 26] = [
    "t", "xi", "yi", "psii", "vi", "deltai", "xj", "yj", "psij", "vj", "deltaj", "unom_vi", "unom_di", "unom_vj",
    "unom_dj", "u_vi", "u_di", "u_vj", "u_dj", "h", "mtv_exact", "c2c_exact", "psi1", "psi2", "qp_status", "qp_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Optimal,
    Relaxed,
    /// Filter switched off; the nominal input was applied.
    Disabled,
}

impl StepStatus {
    pub fn name(&self) -> &'static str {
        match self {
            StepStatus::Optimal => "optimal",
            StepStatus::Relaxed => "relaxed",
            StepStatus::Disabled => "disabled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub t: f64,
    pub state_i: VehicleState,
    pub state_j: VehicleState,
    pub u_nom: [f64; 4],
    pub u_safe: [f64; 4],
    /// Barrier actually used by the filter; NaN when it cannot be evaluated.
    pub h: f64,
    pub mtv_exact: f64,
    pub c2c_exact: f64,
    pub psi1: f64,
    /// Second chain link at the applied input.
    pub psi2: f64,
    pub status: StepStatus,
    /// Wall time inside the QP solver.
    pub qp_ms: f64,
    /// Wall time of the whole filter call, constraint construction included.
    /// Not exported to CSV.
    pub filter_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimLog {
    pub records: Vec<SimRecord>,
    /// Reason the run stopped before the horizon.
    pub aborted: Option<String>,
}

impl SimLog {
    /// CSV with a header row. `timing = false` writes zeros in the wall-time
    /// column so that identical runs produce identical bytes.
    pub fn write_csv<W: Write>(&self, out: W, timing: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(CSV_COLUMNS).map_err(io)?;
        for r in &self.records {
            let (si, sj) = (&r.state_i, &r.state_j);
            let mut row: Vec<String> = [r.t, si.x, si.y, si.psi, si.v, si.delta, sj.x, sj.y, sj.psi, sj.v, sj.delta]
                .into_iter()
                .chain(r.u_nom)
                .chain(r.u_safe)
                .chain([r.h, r.mtv_exact, r.c2c_exact, r.psi1, r.psi2])
                .map(|v| v.to_string())
                .collect();
            row.push(r.status.name().to_string());
            row.push(if timing { r.qp_ms.to_string() } else { "0".to_string() });
            w.write_record(&row).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self, timing: bool) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, timing).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

fn footprint(s: &VehicleState, params: &VehicleParams) -> Result<OrientedRectangle> {
    OrientedRectangle::new(s.x, s.y, s.psi, params.length, params.width)
}

fn start_state(pose: &[f64; 3], speed: f64, jitter: f64, rng: &mut ChaCha8Rng) -> VehicleState {
    let mut d = || if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
    VehicleState::new(pose[0] + d(), pose[1] + d(), pose[2], speed, 0.0)
}

enum Script {
    Overtaking(ObstructionScript),
    Bypassing(BypassScript),
}

/// Simulates `config.horizon` seconds, logging every step including the final
/// state. A filter failure or a barrier that cannot be evaluated stops the
/// run early with `aborted` set; everything logged before is kept.
pub fn run_scenario(config: &ScenarioConfig, net: Option<&MlpParams>, params: &VehicleParams) -> Result<SimLog> {
    config.validate()?;
    params.validate()?;
    let cbf = config.cbf_config(params)?;
    if config.margin_mode != MarginMode::C2c && net.is_none() {
        return Err(Error::MissingModel);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut si = start_state(&config.start_i, config.speed_i, config.start_jitter, &mut rng);
    let mut sj = start_state(&config.start_j, config.speed_j, config.start_jitter, &mut rng);
    let dir_i = config.start_i[2].cos().signum();
    let dir_j = config.start_j[2].cos().signum();
    let mut script = match config.kind {
        ScenarioKind::Overtaking => Script::Overtaking(ObstructionScript::new(config, &sj)),
        ScenarioKind::Bypassing => Script::Bypassing(BypassScript::default()),
    };

    let steps = config.steps();
    let mut log = SimLog {
        records: Vec::with_capacity(steps + 1),
        aborted: None,
    };
    for n in 0..=steps {
        let t = n as f64 * config.dt;
        let (yi, yj) = match &mut script {
            Script::Overtaking(s) => s.update(t, &si, &sj, config),
            Script::Bypassing(s) => s.update(&si, &sj, config, params.length),
        };
        let ui = nominal_controller(&si, &ReferencePath::horizontal(yi, dir_i), config.speed_i, &config.gains, params);
        let uj = nominal_controller(&sj, &ReferencePath::horizontal(yj, dir_j), config.speed_j, &config.gains, params);
        let u_nom = stack_inputs(&ui, &uj);

        let started = Instant::now();
        let (u_safe, constraint, status, qp_ms) = if config.filter_enabled {
            match filter_pair(&si, &sj, &u_nom, &cbf, net, params, config.filter_scope) {
                Ok(f) => {
                    let u: [f64; 4] = std::array::from_fn(|k| f.solution.u[k]);
                    let status = match f.solution.status {
                        QpStatus::Relaxed => StepStatus::Relaxed,
                        _ => StepStatus::Optimal,
                    };
                    (u, Some(f.constraint), status, 1e3 * f.qp_seconds)
                }
                Err(e) => {
                    log.aborted = Some(format!("t = {t}: {e}"));
                    break;
                }
            }
        } else {
            let c = constraint_coefficients(&si, &sj, &cbf, net, params).ok();
            (u_nom, c, StepStatus::Disabled, 0.0)
        };
        let filter_ms = if config.filter_enabled { 1e3 * started.elapsed().as_secs_f64() } else { 0.0 };

        let rel = to_ego_frame(&si, &sj);
        let (h, psi1, psi2) = match &constraint {
            Some(c) => (c.h, c.h_dot + cbf.k_alpha * c.h, c.eval(&u_safe)),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        log.records.push(SimRecord {
            t,
            state_i: si,
            state_j: sj,
            u_nom,
            u_safe,
            h,
            mtv_exact: mtv_margin(&footprint(&si, params)?, &footprint(&sj, params)?).value,
            c2c_exact: c2c_margin(rel.x, rel.y, params.length, params.width),
            psi1,
            psi2,
            status,
            qp_ms,
            filter_ms,
        });
        if n == steps {
            break;
        }
        let (input_i, input_j) = (
            crate::vehicle::ControlInput::new(u_safe[0], u_safe[1]),
            crate::vehicle::ControlInput::new(u_safe[2], u_safe[3]),
        );
        si = integrate_step(&si, &input_i, config.dt, params)?;
        sj = integrate_step(&sj, &input_j, config.dt, params)?;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::FilterScope;
    use crate::hocbf::{barrier_value, CbfConfig};

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn unobstructed_straight_drive() {
        let mut c = ScenarioConfig::bypassing(MarginMode::C2c);
        c.start_j = [20.0, 0.0, std::f64::consts::PI];
        c.horizon = 2.0;
        let log = run_scenario(&c, None, &params()).unwrap();
        assert_eq!(log.records.len(), 41);
        assert!(log.aborted.is_none());
        for r in &log.records {
            assert!(r.state_i.y.abs() < 1e-12);
            assert_eq!(r.u_safe, r.u_nom);
        }
        let last = log.records.last().unwrap();
        assert!((last.t - 2.0).abs() < 1e-12);
        assert!((last.state_i.x - 0.8).abs() < 1e-9);
    }

    #[test]
    fn time_grid_is_uniform() {
        let log = run_scenario(&ScenarioConfig::overtaking(MarginMode::C2c), None, &params()).unwrap();
        assert_eq!(log.records.len(), 201);
        for (n, r) in log.records.iter().enumerate() {
            assert_eq!(r.t, n as f64 * 0.05);
        }
    }

    #[test]
    fn logged_barrier_matches_recomputation() {
        let p = params();
        let c = ScenarioConfig::bypassing(MarginMode::C2c);
        let log = run_scenario(&c, None, &p).unwrap();
        let cbf = CbfConfig::new(c.k_alpha, 0.0, MarginMode::C2c, &p).unwrap();
        for r in &log.records {
            let h = barrier_value(&to_ego_frame(&r.state_i, &r.state_j), &cbf, None, &p).unwrap();
            assert!((h - r.h).abs() <= 1e-12 * (1.0 + h.abs()));
            let oracle = mtv_margin(&footprint(&r.state_i, &p).unwrap(), &footprint(&r.state_j, &p).unwrap()).value;
            assert_eq!(oracle, r.mtv_exact);
        }
    }

    #[test]
    fn identical_configs_give_identical_logs() {
        let mut c = ScenarioConfig::bypassing(MarginMode::C2c);
        c.start_jitter = 0.02;
        c.seed = 9;
        let a = run_scenario(&c, None, &params()).unwrap();
        let b = run_scenario(&c, None, &params()).unwrap();
        assert_eq!(a.to_csv_string(false), b.to_csv_string(false));
        c.seed = 10;
        let other = run_scenario(&c, None, &params()).unwrap();
        assert_ne!(a.records[0].state_i, other.records[0].state_i);
    }

    #[test]
    fn c2c_bypass_is_mirror_symmetric() {
        let log = run_scenario(&ScenarioConfig::bypassing(MarginMode::C2c), None, &params()).unwrap();
        for r in &log.records {
            let (a, b) = (&r.state_i, &r.state_j);
            assert!((a.x + b.x).abs() < 1e-9 && (a.y + b.y).abs() < 1e-9, "t = {}", r.t);
            assert!((crate::wrap_angle(a.psi - b.psi) - std::f64::consts::PI).abs() < 1e-9 || (crate::wrap_angle(a.psi - b.psi) + std::f64::consts::PI).abs() < 1e-9);
            assert!((a.v - b.v).abs() < 1e-9 && (a.delta - b.delta).abs() < 1e-9);
        }
    }

    #[test]
    fn unfiltered_head_on_collides() {
        let mut c = ScenarioConfig::bypassing(MarginMode::C2c);
        c.filter_enabled = false;
        c.y_nom = 0.0;
        let log = run_scenario(&c, None, &params()).unwrap();
        assert!(log.records.iter().all(|r| r.status == StepStatus::Disabled));
        assert!(log.records.iter().any(|r| r.mtv_exact < 0.0));
    }

    #[test]
    fn csv_has_the_fixed_header() {
        let mut c = ScenarioConfig::overtaking(MarginMode::C2c);
        c.horizon = 0.1;
        let text = run_scenario(&c, None, &params()).unwrap().to_csv_string(true);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn learned_modes_need_a_model() {
        let c = ScenarioConfig::overtaking(MarginMode::Hybrid);
        assert!(matches!(run_scenario(&c, None, &params()), Err(Error::MissingModel)));
        let mut bad = ScenarioConfig::overtaking(MarginMode::C2c);
        bad.dt = -1.0;
        assert!(run_scenario(&bad, None, &params()).is_err());
    }

    #[test]
    fn out_of_range_learned_margin_aborts_with_partial_log() {
        let p = params();
        let net = MlpParams::init(&[3, 4, 1], crate::margin_net::InputBox::for_vehicle(&p), 1);
        let mut c = ScenarioConfig::bypassing(MarginMode::Learned);
        c.filter_scope = FilterScope::Joint;
        let log = run_scenario(&c, Some(&net), &p).unwrap();
        assert!(log.records.is_empty());
        assert!(log.aborted.as_deref().unwrap().contains("trained range"));
    }
}

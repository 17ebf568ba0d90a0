use serde::{Deserialize, Serialize};

use super::sim::{SimLog, SimRecord, StepStatus};
use super::{ScenarioConfig, ScenarioKind};
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub kind: ScenarioKind,
    pub steps: usize,
    pub aborted: bool,
    pub min_mtv_margin: f64,
    pub min_mtv_time: f64,
    pub min_c2c_margin: f64,
    pub completed: bool,
    pub completion_time: Option<f64>,
    /// Largest `|y|` over the run, in percent of the vehicle width.
    pub evasion_i_pct: f64,
    pub evasion_j_pct: f64,
    pub evasion_mean_pct: f64,
    pub qp_mean_ms: f64,
    pub qp_max_ms: f64,
    pub filter_mean_ms: f64,
    pub relaxed_steps: usize,
}

/// Completion means robot `i` is fully ahead of `j` for overtaking; for
/// bypassing the robots have swapped sides and both are back within
/// `recenter_tolerance` of `Y = 0`.
pub fn compute_metrics(log: &SimLog, config: &ScenarioConfig, params: &VehicleParams) -> Metrics {
    let records = &log.records;
    let (mut min_mtv, mut min_time, mut min_c2c) = (f64::INFINITY, f64::NAN, f64::INFINITY);
    let (mut ev_i, mut ev_j) = (0.0f64, 0.0f64);
    for r in records {
        if r.mtv_exact < min_mtv {
            min_mtv = r.mtv_exact;
            min_time = r.t;
        }
        min_c2c = min_c2c.min(r.c2c_exact);
        ev_i = ev_i.max(r.state_i.y.abs());
        ev_j = ev_j.max(r.state_j.y.abs());
    }
    let completion_time = records
        .iter()
        .find(|r| {
            let ahead = r.state_i.x - r.state_j.x >= params.length;
            match config.kind {
                ScenarioKind::Overtaking => ahead,
                ScenarioKind::Bypassing => {
                    ahead && r.state_i.y.abs() <= config.recenter_tolerance && r.state_j.y.abs() <= config.recenter_tolerance
                }
            }
        })
        .map(|r| r.t);

    let active: Vec<_> = records.iter().filter(|r| r.status != StepStatus::Disabled).collect();
    let mean = |f: fn(&SimRecord) -> f64| {
        if active.is_empty() {
            0.0
        } else {
            active.iter().map(|r| f(r)).sum::<f64>() / active.len() as f64
        }
    };
    let pct = |y: f64| 100.0 * y / params.width;
    Metrics {
        kind: config.kind,
        steps: records.len(),
        aborted: log.aborted.is_some(),
        min_mtv_margin: min_mtv,
        min_mtv_time: min_time,
        min_c2c_margin: min_c2c,
        completed: completion_time.is_some(),
        completion_time,
        evasion_i_pct: pct(ev_i),
        evasion_j_pct: pct(ev_j),
        evasion_mean_pct: 0.5 * (pct(ev_i) + pct(ev_j)),
        qp_mean_ms: mean(|r| r.qp_ms),
        qp_max_ms: active.iter().map(|r| r.qp_ms).fold(0.0, f64::max),
        filter_mean_ms: mean(|r| r.filter_ms),
        relaxed_steps: records.iter().filter(|r| r.status == StepStatus::Relaxed).count(),
    }
}

impl Metrics {
    /// `key = value` lines.
    pub fn summary(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |t| format!("{t:.2}"));
        format!(
            "kind = {}\nsteps = {}\naborted = {}\nmin_mtv_margin_m = {:.6}\nmin_mtv_time_s = {:.2}\n\
             min_c2c_margin_m = {:.6}\ncompleted = {}\ncompletion_time_s = {}\nevasion_i_pct = {:.2}\n\
             evasion_j_pct = {:.2}\nevasion_mean_pct = {:.2}\nqp_mean_ms = {:.4}\nqp_max_ms = {:.4}\nfilter_mean_ms = {:.4}\nrelaxed_steps = {}\n",
            self.kind.name(),
            self.steps,
            self.aborted,
            self.min_mtv_margin,
            self.min_mtv_time,
            self.min_c2c_margin,
            self.completed,
            opt(self.completion_time),
            self.evasion_i_pct,
            self.evasion_j_pct,
            self.evasion_mean_pct,
            self.qp_mean_ms,
            self.qp_max_ms,
            self.filter_mean_ms,
            self.relaxed_steps,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hocbf::MarginMode;
    use crate::scenarios::run_scenario;
    use crate::vehicle::VehicleState;

    #[test]
    fn straight_drive_has_no_evasion() {
        let p = VehicleParams::default();
        let mut c = ScenarioConfig::bypassing(MarginMode::C2c);
        c.start_j = [20.0, 0.0, std::f64::consts::PI];
        c.horizon = 3.0;
        let m = compute_metrics(&run_scenario(&c, None, &p).unwrap(), &c, &p);
        assert!(m.evasion_mean_pct < 1e-9, "{}", m.evasion_mean_pct);
        assert!(!m.completed && m.completion_time.is_none());
        assert!(m.min_mtv_margin > 0.0 && m.qp_mean_ms >= 0.0 && m.relaxed_steps == 0);
        assert!(m.summary().contains("completed = false"));
    }

    fn record(t: f64, xi: f64, yi: f64, xj: f64, yj: f64) -> SimRecord {
        SimRecord {
            t,
            state_i: VehicleState::new(xi, yi, 0.0, 1.0, 0.0),
            state_j: VehicleState::new(xj, yj, 0.0, 1.0, 0.0),
            u_nom: [0.0; 4],
            u_safe: [0.0; 4],
            h: 0.0,
            mtv_exact: 1.0 - t,
            c2c_exact: 1.0,
            psi1: 0.0,
            psi2: 0.0,
            status: StepStatus::Optimal,
            qp_ms: t,
            filter_ms: 2.0 * t,
        }
    }

    #[test]
    fn completion_and_evasion_rules() {
        let p = VehicleParams::default();
        let log = SimLog {
            records: vec![
                record(0.0, -0.5, 0.0, 0.5, 0.0),
                record(0.5, 0.0, 0.08, 0.0, -0.04),
                record(1.0, 0.2, 0.02, 0.0, 0.0),
                record(1.5, 0.3, 0.005, -0.1, 0.0),
            ],
            aborted: None,
        };
        let by = compute_metrics(&log, &ScenarioConfig::bypassing(MarginMode::C2c), &p);
        assert_eq!(by.completion_time, Some(1.5));
        assert!((by.evasion_i_pct - 100.0).abs() < 1e-12 && (by.evasion_j_pct - 50.0).abs() < 1e-12);
        assert!((by.evasion_mean_pct - 75.0).abs() < 1e-12);
        assert_eq!((by.min_mtv_margin, by.min_mtv_time), (-0.5, 1.5));
        assert!((by.qp_mean_ms - 0.75).abs() < 1e-12 && by.qp_max_ms == 1.5);
        assert!((by.filter_mean_ms - 1.5).abs() < 1e-12);
        let ov = compute_metrics(&log, &ScenarioConfig::overtaking(MarginMode::C2c), &p);
        assert_eq!(ov.completion_time, Some(1.0));
    }
}

//! Closed-loop two-robot experiments: an overtake against an obstructing
//! slower vehicle and a head-on bypass on a narrow road.

mod metrics;
mod nominal;
mod script;
mod sim;

pub use metrics::{compute_metrics, Metrics};
pub use nominal::{nominal_controller, PursuitGains, ReferencePath};
pub use script::{BypassPhase, BypassScript, ObstructionScript};
pub use sim::{run_scenario, SimLog, SimRecord, StepStatus, CSV_COLUMNS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::FilterScope;
use crate::hocbf::{CbfConfig, MarginMode};
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Overtaking,
    Bypassing,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Overtaking => "overtaking",
            ScenarioKind::Bypassing => "bypassing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub dt: f64,
    pub horizon: f64,
    pub k_alpha: f64,
    /// Subtracted from the learned margin; ignored by the circle margin.
    pub epsilon: f64,
    pub margin_mode: MarginMode,
    pub filter_scope: FilterScope,
    pub filter_enabled: bool,
    /// Initial poses `(x, y, psi)`.
    pub start_i: [f64; 3],
    pub start_j: [f64; 3],
    pub speed_i: f64,
    pub speed_j: f64,
    /// Lane spacing for overtaking; lanes are centered at `y = 0` and
    /// `y = lane_width`.
    pub lane_width: f64,
    pub obstruction_count: usize,
    /// Robot `j` obstructs while `0 < x_j - x_i < obstruction_gap`.
    pub obstruction_gap: f64,
    /// Minimum time between two lane switches of robot `j`.
    pub obstruction_cooldown: f64,
    /// Bypassing lateral offset: `i` moves to `+y_nom`, `j` to `-y_nom`.
    pub y_nom: f64,
    /// Bypassing offsets start once `0 < x_j - x_i < approach_gap`.
    pub approach_gap: f64,
    /// `|y|` below which a robot counts as back on its centerline.
    pub recenter_tolerance: f64,
    pub gains: PursuitGains,
    pub seed: u64,
    /// Half-width of a uniform perturbation of both start positions; zero
    /// leaves the seed unused.
    pub start_jitter: f64,
}

impl ScenarioConfig {
    /// Overtaking with `k_alpha = 2`, robot `j` obstructing robot `i` up to
    /// three times.
    pub fn overtaking(margin_mode: MarginMode) -> Self {
        Self {
            kind: ScenarioKind::Overtaking,
            dt: 0.05,
            horizon: 10.0,
            k_alpha: 2.0,
            epsilon: 0.0,
            margin_mode,
            filter_scope: FilterScope::EgoOnly,
            filter_enabled: true,
            start_i: [-1.2, 0.0, 0.0],
            start_j: [-0.4, 0.0, 0.0],
            speed_i: 1.0,
            speed_j: 0.5,
            lane_width: 0.16,
            obstruction_count: 3,
            obstruction_gap: 0.5,
            obstruction_cooldown: 1.0,
            y_nom: 0.0,
            approach_gap: 1.0,
            recenter_tolerance: 0.008,
            gains: PursuitGains::default(),
            seed: 0,
            start_jitter: 0.0,
        }
    }

    /// Bypassing with the per-margin tuning: `y_nom = 0.116, k_alpha = 3` for
    /// the circle margin, `y_nom = 0.072, k_alpha = 6` otherwise.
    pub fn bypassing(margin_mode: MarginMode) -> Self {
        let (y_nom, k_alpha) = match margin_mode {
            MarginMode::C2c => (0.116, 3.0),
            _ => (0.072, 6.0),
        };
        Self {
            kind: ScenarioKind::Bypassing,
            horizon: 6.0,
            k_alpha,
            y_nom,
            filter_scope: FilterScope::Joint,
            start_i: [-1.2, 0.0, 0.0],
            start_j: [1.2, 0.0, std::f64::consts::PI],
            speed_i: 1.0,
            speed_j: 1.0,
            ..Self::overtaking(margin_mode)
        }
    }

    pub fn preset(kind: ScenarioKind, margin_mode: MarginMode) -> Self {
        match kind {
            ScenarioKind::Overtaking => Self::overtaking(margin_mode),
            ScenarioKind::Bypassing => Self::bypassing(margin_mode),
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn cbf_config(&self, params: &VehicleParams) -> Result<CbfConfig> {
        CbfConfig::new(self.k_alpha, self.epsilon, self.margin_mode, params)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let positive = [
            ("dt", self.dt),
            ("horizon", self.horizon),
            ("lane_width", self.lane_width),
            ("obstruction_gap", self.obstruction_gap),
            ("approach_gap", self.approach_gap),
            ("recenter_tolerance", self.recenter_tolerance),
            ("lookahead", self.gains.lookahead),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return bad(format!("{name} must be positive, got {value}"));
            }
        }
        let finite = [
            ("k_alpha", self.k_alpha),
            ("epsilon", self.epsilon),
            ("speed_i", self.speed_i),
            ("speed_j", self.speed_j),
            ("y_nom", self.y_nom),
            ("obstruction_cooldown", self.obstruction_cooldown),
            ("start_jitter", self.start_jitter),
            ("speed_gain", self.gains.speed_gain),
            ("steer_gain", self.gains.steer_gain),
        ];
        for (name, value) in finite.into_iter().chain(self.start_i.iter().chain(&self.start_j).map(|v| ("start pose", *v))) {
            if !value.is_finite() {
                return bad(format!("{name} must be finite, got {value}"));
            }
        }
        if self.start_jitter < 0.0 {
            return bad(format!("start_jitter must be non-negative, got {}", self.start_jitter));
        }
        if self.dt > self.horizon {
            return bad(format!("dt {} exceeds the horizon {}", self.dt, self.horizon));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_the_per_mode_tuning() {
        let c = ScenarioConfig::bypassing(MarginMode::C2c);
        assert_eq!((c.y_nom, c.k_alpha, c.horizon), (0.116, 3.0, 6.0));
        let m = ScenarioConfig::bypassing(MarginMode::Hybrid);
        assert_eq!((m.y_nom, m.k_alpha), (0.072, 6.0));
        assert_eq!(m.filter_scope, FilterScope::Joint);
        let o = ScenarioConfig::overtaking(MarginMode::Hybrid);
        assert_eq!((o.k_alpha, o.horizon, o.steps()), (2.0, 10.0, 200));
        assert_eq!(o.filter_scope, FilterScope::EgoOnly);
        assert_eq!((o.start_i[0], o.start_j[0], o.speed_i, o.speed_j), (-1.2, -0.4, 1.0, 0.5));
        assert!(o.validate().is_ok() && m.validate().is_ok());
    }

    #[test]
    fn rejects_bad_step_and_horizon() {
        for f in [
            |c: &mut ScenarioConfig| c.dt = 0.0,
            |c: &mut ScenarioConfig| c.horizon = -1.0,
            |c: &mut ScenarioConfig| c.dt = f64::NAN,
            |c: &mut ScenarioConfig| c.speed_i = f64::INFINITY,
            |c: &mut ScenarioConfig| c.start_jitter = -0.1,
        ] {
            let mut c = ScenarioConfig::overtaking(MarginMode::C2c);
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        }
    }
}

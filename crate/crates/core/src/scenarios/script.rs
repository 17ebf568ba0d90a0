//! Reference-line choreography for the two experiments.

use super::ScenarioConfig;
use crate::vehicle::VehicleState;

/// Robot `j`'s lane switching in the overtake. Robot `i` always aims for the
/// lane robot `j` is not heading to.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstructionScript {
    pub lane_j: usize,
    pub switches: usize,
    last_switch: Option<f64>,
}

impl ObstructionScript {
    pub fn new(config: &ScenarioConfig, state_j: &VehicleState) -> Self {
        Self {
            lane_j: nearest_lane(state_j.y, config.lane_width),
            switches: 0,
            last_switch: None,
        }
    }

    /// Whether `j` cuts into `i`'s lane: `i` is close behind in the other lane
    /// and obstructions are left.
    pub fn obstructs(gap: f64, lane_i: usize, lane_j: usize, switches: usize, config: &ScenarioConfig) -> bool {
        gap > 0.0 && gap < config.obstruction_gap && lane_i != lane_j && switches < config.obstruction_count
    }

    /// Advances the script and returns the reference `y` for `i` and `j`.
    pub fn update(&mut self, t: f64, state_i: &VehicleState, state_j: &VehicleState, config: &ScenarioConfig) -> (f64, f64) {
        let lane_i = nearest_lane(state_i.y, config.lane_width);
        let rested = self.last_switch.is_none_or(|s| t - s >= config.obstruction_cooldown);
        if rested && Self::obstructs(state_j.x - state_i.x, lane_i, self.lane_j, self.switches, config) {
            self.lane_j = lane_i;
            self.switches += 1;
            self.last_switch = Some(t);
        }
        let target_i = 1 - self.lane_j;
        (target_i as f64 * config.lane_width, self.lane_j as f64 * config.lane_width)
    }
}

/// Index of the closer of the two lane centers `0` and `lane_width`.
pub fn nearest_lane(y: f64, lane_width: f64) -> usize {
    usize::from(y > 0.5 * lane_width)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BypassPhase {
    Approach,
    Evade,
    Return,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BypassScript {
    pub phase: BypassPhase,
}

impl Default for BypassScript {
    fn default() -> Self {
        Self {
            phase: BypassPhase::Approach,
        }
    }
}

impl BypassScript {
    /// Reference lines on `Y = 0` until the robots are within
    /// `approach_gap`, then `+y_nom` for `i` and `-y_nom` for `j` until they
    /// have fully passed, then `Y = 0` again.
    pub fn update(&mut self, state_i: &VehicleState, state_j: &VehicleState, config: &ScenarioConfig, length: f64) -> (f64, f64) {
        let gap = state_j.x - state_i.x;
        if self.phase == BypassPhase::Approach && gap < config.approach_gap {
            self.phase = BypassPhase::Evade;
        }
        if self.phase == BypassPhase::Evade && -gap >= length {
            self.phase = BypassPhase::Return;
        }
        match self.phase {
            BypassPhase::Evade => (config.y_nom, -config.y_nom),
            _ => (0.0, 0.0),
        }
    }
}

//! TOML run configuration, one section per module. Every key is optional and
//! defaults to the values used in the experiments.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mtv_cbf::filter::FilterScope;
use mtv_cbf::hocbf::MarginMode;
use mtv_cbf::margin_net::TrainingConfig;
use mtv_cbf::scenarios::{PursuitGains, ScenarioConfig, ScenarioKind};
use mtv_cbf::vehicle::VehicleParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub vehicle: VehicleParams,
    /// Dataset size and seed live here too; `gen-data` uses them.
    pub training: TrainingConfig,
    pub bound: BoundSection,
    pub model: ModelSection,
    pub scenario: ScenarioSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSection {
    pub samples: usize,
    pub seed: u64,
}

impl Default for BoundSection {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Model file; relative paths resolve against the config file.
    pub path: Option<PathBuf>,
}

/// Picks a preset by `kind` and `margin_mode`, then applies any field that
/// is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    pub margin_mode: MarginMode,
    /// Learned-margin error bound. Left unset, it is estimated from the model
    /// with the `[bound]` settings.
    pub epsilon: Option<f64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub k_alpha: Option<f64>,
    pub filter_scope: Option<FilterScope>,
    pub filter_enabled: Option<bool>,
    pub y_nom: Option<f64>,
    pub speed_i: Option<f64>,
    pub speed_j: Option<f64>,
    pub start_i: Option<[f64; 3]>,
    pub start_j: Option<[f64; 3]>,
    pub lane_width: Option<f64>,
    pub obstruction_count: Option<usize>,
    pub obstruction_gap: Option<f64>,
    pub obstruction_cooldown: Option<f64>,
    pub approach_gap: Option<f64>,
    pub recenter_tolerance: Option<f64>,
    pub gains: Option<PursuitGains>,
    pub seed: Option<u64>,
    pub start_jitter: Option<f64>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Overtaking,
            margin_mode: MarginMode::Hybrid,
            epsilon: None,
            dt: None,
            horizon: None,
            k_alpha: None,
            filter_scope: None,
            filter_enabled: None,
            y_nom: None,
            speed_i: None,
            speed_j: None,
            start_i: None,
            start_j: None,
            lane_width: None,
            obstruction_count: None,
            obstruction_gap: None,
            obstruction_cooldown: None,
            approach_gap: None,
            recenter_tolerance: None,
            gains: None,
            seed: None,
            start_jitter: None,
        }
    }
}

impl ScenarioSection {
    /// Scenario config with `epsilon` still to be filled in when it is unset.
    pub fn resolve(&self) -> ScenarioConfig {
        let mut c = ScenarioConfig::preset(self.kind, self.margin_mode);
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        set!(
            epsilon, dt, horizon, k_alpha, filter_scope, filter_enabled, y_nom, speed_i, speed_j, start_i, start_j, lane_width,
            obstruction_count, obstruction_gap, obstruction_cooldown, approach_gap, recenter_tolerance, gains, seed,
            start_jitter
        );
        c
    }
}

pub struct Loaded {
    pub config: Config,
    /// Directory of the config file, for resolving relative paths.
    pub base: PathBuf,
}

pub fn load(path: Option<&Path>) -> Result<Loaded> {
    let Some(path) = path else {
        return Ok(Loaded {
            config: Config::default(),
            base: PathBuf::from("."),
        });
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let config: Config = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    config.vehicle.validate()?;
    config.training.validate()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, base })
}

impl Loaded {
    pub fn model_path(&self, flag: Option<&Path>) -> Option<PathBuf> {
        flag.map(Path::to_path_buf).or_else(|| self.config.model.path.as_ref().map(|p| self.base.join(p)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c: Config = toml::from_str("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.training.sample_count, 70_000);
        assert_eq!(c.scenario.resolve(), ScenarioConfig::overtaking(MarginMode::Hybrid));
    }

    #[test]
    fn overrides_apply_on_top_of_the_preset() {
        let c: Config = toml::from_str(
            "[scenario]\nkind = \"bypassing\"\nmargin_mode = \"c2c\"\nhorizon = 4.0\nfilter_scope = \"ego_only\"\n\n[vehicle]\nwidth = 0.1\n",
        )
        .unwrap();
        let s = c.scenario.resolve();
        assert_eq!((s.kind, s.y_nom, s.k_alpha, s.horizon), (ScenarioKind::Bypassing, 0.116, 3.0, 4.0));
        assert_eq!(s.filter_scope, FilterScope::EgoOnly);
        assert_eq!(c.vehicle.width, 0.1);
        assert_eq!(c.vehicle.length, 0.16);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("[scenario]\nhorizn = 3.0\n").is_err());
        assert!(toml::from_str::<Config>("[nonsense]\n").is_err());
    }
}

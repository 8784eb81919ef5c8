use serde::{Deserialize, Serialize};

use crate::ann::{AnnMode, FeatureSpec, InputArity, TrainOptions};
use crate::controller::ControllerKind;
use crate::error::{Error, Result};
use crate::pv::{ArrayTopology, EnvironmentProfile, PvModuleParams};

/// One experiment: plant, irradiance schedule, controllers to compare and run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub module: PvModuleParams,
    pub topology: ArrayTopology,
    pub environment: EnvironmentProfile,
    pub controllers: Vec<ControllerSpec>,
    pub experiment: ExperimentSettings,
}

/// A controller entry. Tuning fields left out take the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub name: String,
    pub kind: ControllerKind,
    /// Network readings; required for `ann-ic-baseline`, optional for `enhanced`.
    #[serde(default)]
    pub ann_mode: Option<AnnMode>,
    #[serde(default = "multi")]
    pub ann_inputs: InputArity,
    #[serde(default)]
    pub m_probes: Option<usize>,
    #[serde(rename = "slope_guard_v", default)]
    pub slope_guard: Option<f64>,
    #[serde(default)]
    pub slope_window: Option<usize>,
    #[serde(default)]
    pub ic_gain: Option<f64>,
}

fn multi() -> InputArity {
    InputArity::Multi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    #[serde(rename = "t_end_s")]
    pub t_end: f64,
    pub n_replications: usize,
    pub base_seed: u64,
    #[serde(rename = "f_s_hz", default = "default_fs")]
    pub f_s: f64,
    /// Voltage measurement noise variance.
    #[serde(rename = "sigma_v2_v2")]
    pub sigma_v2: f64,
    /// Particle process noise variance.
    #[serde(rename = "sigma_w2_v2")]
    pub sigma_w2: f64,
    /// Target false-alarm period of both detectors.
    #[serde(rename = "gamma_s", default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub ann: AnnSettings,
    /// Alarm rates for resource saving are counted over this long after each change.
    #[serde(rename = "resource_window_s", default = "default_window")]
    pub resource_window: f64,
    /// Write one telemetry CSV per replication and controller.
    #[serde(default = "yes")]
    pub write_traces: bool,
}

fn default_fs() -> f64 {
    20.0
}
fn default_gamma() -> f64 {
    20.0
}
fn default_window() -> f64 {
    2.0
}
fn yes() -> bool {
    true
}

/// Offline runs under the first schedule entry that fix the prior and both thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSettings {
    pub episodes: usize,
    #[serde(rename = "episode_s")]
    pub episode: f64,
    /// Leading part of each offline episode left out of the statistics.
    #[serde(rename = "warmup_s")]
    pub warmup: f64,
    pub runs: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            episodes: 10,
            episode: 200.0,
            warmup: 2.0,
            runs: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnSettings {
    pub levels: Vec<f64>,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub train: TrainOptions,
    /// Probe sets drawn per grid pattern in VI mode.
    #[serde(default = "default_probe_sets")]
    pub probes_per_pattern: usize,
    pub seed: u64,
}

fn default_probe_sets() -> usize {
    20
}

impl Default for AnnSettings {
    fn default() -> Self {
        Self {
            levels: vec![0.2, 0.36, 0.52, 0.68, 0.84, 1.0],
            hidden: vec![20, 10],
            train: TrainOptions::default(),
            probes_per_pattern: default_probe_sets(),
            seed: 7,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The bundled small-array scenario (SP1 at 5.75 s, SP2 at 7.75 s).
    pub fn small_sp1_sp2() -> Self {
        Self::from_json(include_str!("../../scenarios/small_sp1_sp2.json"))
            .expect("bundled scenario is valid")
    }

    /// The bundled large-array scenario (SP1 at 5.8 s, SP2 at 7.8 s).
    pub fn large_sp1_sp2() -> Self {
        Self::from_json(include_str!("../../scenarios/large_sp1_sp2.json"))
            .expect("bundled scenario is valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.module.validate()?;
        self.topology.validate()?;
        self.environment.validate(&self.topology)?;
        let e = &self.experiment;
        if self.controllers.is_empty() {
            return Err(Error::InvalidInput(
                "scenario needs at least one controller".into(),
            ));
        }
        for (k, c) in self.controllers.iter().enumerate() {
            if c.name.is_empty()
                || !c
                    .name
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_')
            {
                return Err(Error::InvalidInput(format!(
                    "controller name {:?} must be [A-Za-z0-9_-]+",
                    c.name
                )));
            }
            if self.controllers[..k].iter().any(|o| o.name == c.name) {
                return Err(Error::InvalidInput(format!(
                    "duplicate controller name {:?}",
                    c.name
                )));
            }
            if c.kind == ControllerKind::AnnIcBaseline && c.ann_mode.is_none() {
                return Err(Error::InvalidInput(format!(
                    "controller {:?} needs ann_mode",
                    c.name
                )));
            }
        }
        if !(e.t_end > 0.0 && e.t_end.is_finite()) {
            return Err(Error::InvalidInput("t_end_s must be positive".into()));
        }
        let last = self.environment.schedule.last().map_or(0.0, |s| s.t_start);
        if last >= e.t_end {
            return Err(Error::InvalidInput(
                "t_end_s must cover every schedule entry".into(),
            ));
        }
        if e.n_replications == 0 {
            return Err(Error::InvalidInput("n_replications must be >= 1".into()));
        }
        for (name, x) in [
            ("f_s_hz", e.f_s),
            ("gamma_s", e.gamma),
            ("sigma_v2_v2", e.sigma_v2),
            ("sigma_w2_v2", e.sigma_w2),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if !(e.resource_window > 0.0) {
            return Err(Error::InvalidInput(
                "resource_window_s must be positive".into(),
            ));
        }
        let c = &e.calibration;
        if c.episodes == 0 || !(c.episode > c.warmup && c.warmup >= 0.0) {
            return Err(Error::InvalidInput(
                "calibration needs episodes >= 1 and episode_s > warmup_s >= 0".into(),
            ));
        }
        if e.ann.hidden.is_empty() || e.ann.hidden.len() > 4 || e.ann.hidden.contains(&0) {
            return Err(Error::InvalidInput(
                "ann.hidden needs 1 to 4 non-empty layers".into(),
            ));
        }
        Ok(())
    }

    /// Feature layout of the network a controller needs, if any.
    pub fn feature_spec(&self, c: &ControllerSpec) -> Option<FeatureSpec> {
        let groups = self.topology.group_count();
        let m = c.m_probes.unwrap_or(4);
        match c.ann_mode? {
            AnnMode::Irradiance => Some(FeatureSpec::irradiance(groups, c.ann_inputs)),
            AnnMode::ViProbes => Some(FeatureSpec::vi_probes(groups, m, c.ann_inputs)),
        }
    }

    /// Start times of every schedule entry after the first.
    pub fn change_times(&self) -> Vec<f64> {
        self.environment
            .schedule
            .iter()
            .skip(1)
            .map(|s| s.t_start)
            .collect()
    }
}

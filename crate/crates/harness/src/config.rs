//! Scenario configuration: one TOML file describing the environment, the
//! vehicles, the safety net and the pipeline stages.
//!
//! Every section is optional and falls back to the defaults below; unknown
//! keys are rejected.
//!
//! ```toml
//! preset = "lab"
//! seed = 7
//!
//! [safety]
//! margin = 0.25
//! obstacles = [{ x_min = 1.0, x_max = 1.5, y_min = -0.5, y_max = 0.5 }]
//!
//! [train]
//! epochs = 2000
//! ```

use std::path::{Path, PathBuf};

use absdl_core::dataset::{ExpertGains, SubTaskSpec};
use absdl_core::evaluator::EpisodeContext;
use absdl_core::learner::TrainConfig;
use absdl_core::safety::{Arbiter, Obstacle, SafetyConfig};
use absdl_core::sim::{
    Arena, CameraModel, Dynamics, ManoeuvreKind, ManoeuvreSpec, ObservationModel, Preset, Segment, VelocityLimits,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "ABSDL_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    /// First-order velocity time constant (s).
    pub tau: f64,
    pub ground_clearance: f64,
    pub v_horizontal: f64,
    pub v_vertical: f64,
    pub v_yaw: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        let d = Dynamics::default();
        Self {
            tau: d.tau,
            ground_clearance: d.ground_clearance,
            v_horizontal: d.v_max.horizontal,
            v_vertical: d.v_max.vertical,
            v_yaw: d.v_max.yaw,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub focal: f64,
    pub half_fov_deg: f64,
    /// Target UGV spread R* as a fraction of the image extent.
    pub target_fraction: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        Self { focal: 1.0, half_fov_deg: 32.0, target_fraction: 0.6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManoeuvreSection {
    /// Manoeuvre run by `simulate` and `serve` when none is given.
    pub kind: ManoeuvreKind,
    /// Explicit program replacing the preset for `kind`.
    pub segments: Option<Vec<Segment>>,
}

impl Default for ManoeuvreSection {
    fn default() -> Self {
        Self { kind: ManoeuvreKind::Combined, segments: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetySection {
    pub margin: f64,
    pub altitude_band: [f64; 2],
    /// Defaults to the preset arena.
    pub bounds: Option<Arena>,
    pub obstacles: Vec<Obstacle>,
    /// Steps predicted ahead before a command is accepted.
    pub lookahead: usize,
    /// Seconds after which an unrefreshed override is ignored.
    pub override_staleness: f64,
}

impl Default for SafetySection {
    fn default() -> Self {
        Self {
            margin: 0.3,
            altitude_band: [0.3, 3.0],
            bounds: None,
            obstacles: Vec::new(),
            lookahead: 1,
            override_staleness: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertSection {
    pub gains: ExpertGains,
    /// Climb/descend experts act on the vertical channel only.
    pub strict: bool,
}

impl Default for ExpertSection {
    fn default() -> Self {
        Self { gains: ExpertGains::default(), strict: false }
    }
}

/// Scripted episodes recorded per manoeuvre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecordSection {
    pub fixed_altitude: u32,
    pub climb: u32,
    pub descend: u32,
    pub combined: u32,
}

impl Default for RecordSection {
    fn default() -> Self {
        // 5·1060, 10·469 and 10·490 samples: close to 5296 / 4691 / 4904.
        Self { fixed_altitude: 5, climb: 10, descend: 10, combined: 10 }
    }
}

impl RecordSection {
    pub fn episodes(&self, kind: ManoeuvreKind) -> u32 {
        match kind {
            ManoeuvreKind::FixedAltitude => self.fixed_altitude,
            ManoeuvreKind::Climb => self.climb,
            ManoeuvreKind::Descend => self.descend,
            ManoeuvreKind::Combined => self.combined,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub runs: usize,
    /// Randomize formation orientation, track mirroring and UAV start.
    pub randomize: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { runs: 10, randomize: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceSection {
    pub port: u16,
    /// StateUpdate broadcast rate (Hz).
    pub stream_hz: f64,
    /// Shared token required from clients that send overrides.
    pub token: Option<String>,
    /// Outbound frames buffered per client before the oldest is dropped.
    pub queue: usize,
    /// Simulated seconds per wall-clock second.
    pub time_scale: f64,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self { port: 7878, stream_hz: 20.0, token: None, queue: 8, time_scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub preset: Preset,
    /// Simulation step (s).
    pub dt: f64,
    pub seed: u64,
    pub dynamics: DynamicsSection,
    pub camera: CameraSection,
    pub manoeuvre: ManoeuvreSection,
    pub safety: SafetySection,
    pub expert: ExpertSection,
    pub record: RecordSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub service: ServiceSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Sim,
            dt: absdl_core::sim::DEFAULT_DT,
            seed: 0,
            dynamics: DynamicsSection::default(),
            camera: CameraSection::default(),
            manoeuvre: ManoeuvreSection::default(),
            safety: SafetySection::default(),
            expert: ExpertSection::default(),
            record: RecordSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            service: ServiceSection::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parse and validate TOML text.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    /// Load from `explicit`, else from `$ABSDL_CONFIG`, else use defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(PathBuf::from(p)),
                _ => {
                    let cfg = Self::default();
                    cfg.validate()?;
                    Ok(cfg)
                }
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("configuration serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let d = &self.dynamics;
        if !(d.tau > 0.0 && d.tau.is_finite()) {
            return bad(format!("dynamics.tau must be positive, got {}", d.tau));
        }
        if ![d.v_horizontal, d.v_vertical, d.v_yaw].iter().all(|v| *v > 0.0 && v.is_finite()) {
            return bad("velocity limits must be positive".into());
        }
        if !(d.ground_clearance >= 0.0) {
            return bad("dynamics.ground_clearance must be non-negative".into());
        }
        self.camera_model()?;
        let c = &self.camera;
        if !(c.target_fraction > 0.0 && c.target_fraction < 1.0) {
            return bad(format!("camera.target_fraction must lie in (0, 1), got {}", c.target_fraction));
        }
        self.safety_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.safety.lookahead == 0 {
            return bad("safety.lookahead must be at least 1".into());
        }
        if !(self.safety.override_staleness > 0.0) {
            return bad("safety.override_staleness must be positive".into());
        }
        if self.manoeuvre.segments.is_some() {
            self.manoeuvre_spec(self.manoeuvre.kind)?;
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        if self.eval.runs == 0 {
            return bad("eval.runs must be positive".into());
        }
        let s = &self.service;
        if !(s.stream_hz > 0.0 && s.stream_hz.is_finite()) {
            return bad("service.stream_hz must be positive".into());
        }
        if s.queue == 0 {
            return bad("service.queue must be positive".into());
        }
        if !(s.time_scale > 0.0 && s.time_scale.is_finite()) {
            return bad("service.time_scale must be positive".into());
        }
        Ok(())
    }

    pub fn arena(&self) -> Arena {
        self.safety.bounds.unwrap_or_else(|| Arena::preset(self.preset))
    }

    pub fn dynamics(&self) -> Dynamics {
        let d = &self.dynamics;
        Dynamics {
            tau: d.tau,
            v_max: VelocityLimits { horizontal: d.v_horizontal, vertical: d.v_vertical, yaw: d.v_yaw },
            ground_clearance: d.ground_clearance,
        }
    }

    pub fn camera_model(&self) -> Result<CameraModel, ConfigError> {
        CameraModel::new(self.camera.focal, self.camera.half_fov_deg.to_radians())
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn observation_model(&self) -> ObservationModel {
        let camera = self.camera_model().expect("validated configuration");
        ObservationModel::new(camera, self.camera.target_fraction, self.dynamics().v_max)
    }

    pub fn safety_config(&self) -> SafetyConfig {
        SafetyConfig {
            obstacles: self.safety.obstacles.clone(),
            bounds: self.arena(),
            margin: self.safety.margin,
            altitude_band: self.safety.altitude_band,
        }
    }

    pub fn arbiter(&self) -> Arbiter {
        let mut a = Arbiter::new(self.safety_config(), self.dynamics(), self.dt);
        a.lookahead = self.safety.lookahead;
        a.staleness = self.safety.override_staleness;
        a
    }

    /// The configured program when `kind` matches it, else the preset.
    pub fn manoeuvre_spec(&self, kind: ManoeuvreKind) -> Result<ManoeuvreSpec, ConfigError> {
        match &self.manoeuvre.segments {
            Some(segments) if kind == self.manoeuvre.kind => ManoeuvreSpec::new(kind, segments.clone(), 0.0)
                .map_err(|e| ConfigError::Invalid(format!("manoeuvre: {e}"))),
            _ => Ok(ManoeuvreSpec::preset(kind, &self.arena())),
        }
    }

    pub fn episode_context(&self, kind: ManoeuvreKind) -> Result<EpisodeContext, ConfigError> {
        let mut ctx = EpisodeContext::new(self.observation_model(), self.arbiter(), self.manoeuvre_spec(kind)?);
        ctx.randomize = self.eval.randomize;
        Ok(ctx)
    }

    pub fn subtask(&self, kind: ManoeuvreKind) -> SubTaskSpec {
        SubTaskSpec::preset(kind, self.expert.strict)
    }

    /// Sub-task whose id is `tag`.
    pub fn subtask_by_tag(&self, tag: u32) -> Option<SubTaskSpec> {
        [ManoeuvreKind::FixedAltitude, ManoeuvreKind::Climb, ManoeuvreKind::Descend, ManoeuvreKind::Combined]
            .into_iter()
            .map(|k| self.subtask(k))
            .find(|s| s.id == tag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ScenarioConfig::from_toml("").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        assert_eq!(cfg.arena(), Arena::preset(Preset::Sim));
        assert_eq!(cfg.train.dims(), vec![11, 300, 300, 4]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ScenarioConfig::from_toml("presett = \"sim\"").is_err());
        assert!(ScenarioConfig::from_toml("[safety]\nmargn = 0.3").is_err());
        assert!(ScenarioConfig::from_toml("[train]\nepoch = 3").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ScenarioConfig::from_toml("dt = 0.0").is_err());
        assert!(ScenarioConfig::from_toml("[safety]\naltitude_band = [2.0, 1.0]").is_err());
        assert!(ScenarioConfig::from_toml("[safety]\nobstacles = [{ x_min = 1.0, x_max = 0.0, y_min = 0.0, y_max = 1.0 }]").is_err());
        assert!(ScenarioConfig::from_toml("[camera]\nhalf_fov_deg = 95.0").is_err());
        assert!(ScenarioConfig::from_toml("[service]\nstream_hz = 0.0").is_err());
    }

    #[test]
    fn lab_preset_and_round_trip() {
        let text = "preset = \"lab\"\nseed = 7\n[safety]\nobstacles = [{ x_min = 1.0, x_max = 1.5, y_min = -0.5, y_max = 0.5 }]\n";
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(cfg.arena(), Arena { x_min: -3.3, x_max: 3.3, y_min: -2.5, y_max: 2.5 });
        assert_eq!(cfg.safety_config().obstacles.len(), 1);
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
        assert_ne!(cfg.fingerprint(), ScenarioConfig::default().fingerprint());
    }

    #[test]
    fn explicit_program_overrides_its_kind_only() {
        let text = r#"
[manoeuvre]
kind = "climb"
segments = [{ kind = "climb", duration = 4.0, path = [[0.0, 0.0], [1.0, 0.0]], scale = [1.0, 1.5] }]
"#;
        let cfg = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(cfg.manoeuvre_spec(ManoeuvreKind::Climb).unwrap().duration(), 4.0);
        assert_eq!(cfg.manoeuvre_spec(ManoeuvreKind::Descend).unwrap().duration(), 24.5);
        let bad = text.replace("[1.0, 1.5]", "[1.5, 1.0]");
        assert!(ScenarioConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn subtask_tags_resolve() {
        let cfg = ScenarioConfig::default();
        for tag in 1..=4 {
            assert_eq!(cfg.subtask_by_tag(tag).unwrap().id, tag);
        }
        assert!(cfg.subtask_by_tag(9).is_none());
    }
}

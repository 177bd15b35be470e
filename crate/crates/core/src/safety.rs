//! Double-layer safety net: hard geometric margins around obstacles and the
//! arena boundary, hover/stop arbitration on predicted violations, and a
//! manual-override channel for a human operator.
//!
//! A position is unsafe (η = 1) when it lies strictly inside an obstacle
//! rectangle inflated by the margin ξ, or within ξ of (or beyond) any arena
//! boundary. For the UAV an altitude band is enforced the same way.

use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{hold_position, step_world, Action, Arena, Dynamics, ManoeuvreSpec, Point2, SimError, WorldState, UGV_COUNT};

#[derive(Debug, Error, PartialEq)]
pub enum SafetyError {
    #[error("obstacle edges out of order: x [{x_min}, {x_max}], y [{y_min}, {y_max}]")]
    InvalidObstacle { x_min: f64, x_max: f64, y_min: f64, y_max: f64 },
    #[error("invalid safety configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Axis-aligned obstacle rectangle (metres).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawObstacle", into = "RawObstacle")]
pub struct Obstacle {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObstacle {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl TryFrom<RawObstacle> for Obstacle {
    type Error = SafetyError;
    fn try_from(r: RawObstacle) -> Result<Self, SafetyError> {
        Obstacle::new(r.x_min, r.x_max, r.y_min, r.y_max)
    }
}

impl From<Obstacle> for RawObstacle {
    fn from(o: Obstacle) -> Self {
        RawObstacle { x_min: o.x_min, x_max: o.x_max, y_min: o.y_min, y_max: o.y_max }
    }
}

impl Obstacle {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, SafetyError> {
        if x_min < x_max && y_min < y_max {
            Ok(Self { x_min, x_max, y_min, y_max })
        } else {
            Err(SafetyError::InvalidObstacle { x_min, x_max, y_min, y_max })
        }
    }

    pub fn edges(&self) -> [f64; 4] {
        [self.x_min, self.x_max, self.y_min, self.y_max]
    }

    fn violated_by(&self, p: Point2, xi: f64) -> bool {
        p.x + xi > self.x_min && p.x - xi < self.x_max && p.y + xi > self.y_min && p.y - xi < self.y_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    West,
    East,
    South,
    North,
    Floor,
    Ceiling,
}

/// Which margin a position violates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginId {
    Obstacle(usize),
    Boundary(Side),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub bounds: Arena,
    /// Margin thickness ξ in metres.
    pub margin: f64,
    /// Allowed UAV altitude band `[min, max]` in metres.
    pub altitude_band: [f64; 2],
}

impl SafetyConfig {
    pub fn new(bounds: Arena) -> Self {
        Self { obstacles: Vec::new(), bounds, margin: 0.3, altitude_band: [0.3, 3.0] }
    }

    pub fn validate(&self) -> Result<(), SafetyError> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(SafetyError::InvalidConfig(format!("margin must be >= 0, got {}", self.margin)));
        }
        if !self.bounds.is_valid() {
            return Err(SafetyError::InvalidConfig("arena bounds are empty".into()));
        }
        let [lo, hi] = self.altitude_band;
        if !(lo < hi && lo > 0.0) {
            return Err(SafetyError::InvalidConfig(format!("altitude band [{lo}, {hi}] is invalid")));
        }
        Ok(())
    }
}

/// First planar margin violated by `p`, obstacles before boundaries.
pub fn active_margin(p: Point2, cfg: &SafetyConfig) -> Option<MarginId> {
    let xi = cfg.margin;
    if let Some(i) = cfg.obstacles.iter().position(|o| o.violated_by(p, xi)) {
        return Some(MarginId::Obstacle(i));
    }
    let b = &cfg.bounds;
    let side = if p.x - xi < b.x_min {
        Side::West
    } else if p.x + xi > b.x_max {
        Side::East
    } else if p.y - xi < b.y_min {
        Side::South
    } else if p.y + xi > b.y_max {
        Side::North
    } else if p.is_finite() {
        return None;
    } else {
        // NaN coordinates fail every comparison above; treat them as outside.
        Side::West
    };
    Some(MarginId::Boundary(side))
}

/// Planar margin or altitude band violated by a UAV at `p`, height `z`.
pub fn active_margin_3d(p: Point2, z: f64, cfg: &SafetyConfig) -> Option<MarginId> {
    active_margin(p, cfg).or_else(|| {
        let [lo, hi] = cfg.altitude_band;
        if z < lo {
            Some(MarginId::Boundary(Side::Floor))
        } else if z > hi || z.is_nan() {
            Some(MarginId::Boundary(Side::Ceiling))
        } else {
            None
        }
    })
}

/// η for a planar position: 1 when unsafe, 0 otherwise.
pub fn check_unsafe(p: Point2, cfg: &SafetyConfig) -> u8 {
    active_margin(p, cfg).is_some() as u8
}

/// η for a UGV position. Same predicate as [`check_unsafe`]; the consequence
/// of a violation is a stop rather than a hover.
pub fn check_unsafe_ugv(p: Point2, cfg: &SafetyConfig) -> u8 {
    check_unsafe(p, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Autonomous,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverrideCommand {
    pub mode: ControlMode,
    /// Used only in manual mode.
    pub manual_action: Action,
    pub source: String,
    /// Simulation time (s) at which the command was issued.
    pub timestamp: f64,
}

impl OverrideCommand {
    pub fn manual(action: Action, source: impl Into<String>, timestamp: f64) -> Self {
        Self { mode: ControlMode::Manual, manual_action: action, source: source.into(), timestamp }
    }

    pub fn autonomous(source: impl Into<String>, timestamp: f64) -> Self {
        Self { mode: ControlMode::Autonomous, manual_action: Action::ZERO, source: source.into(), timestamp }
    }
}

/// Latest override, written by the telemetry side and read by the control loop.
#[derive(Clone, Debug, Default)]
pub struct OverrideSlot(Arc<RwLock<Option<OverrideCommand>>>);

impl OverrideSlot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn publish(&self, cmd: OverrideCommand) {
        *self.0.write().unwrap_or_else(|e| e.into_inner()) = Some(cmd);
    }

    pub fn clear(&self) {
        *self.0.write().unwrap_or_else(|e| e.into_inner()) = None;
    }

    pub fn latest(&self) -> Option<OverrideCommand> {
        self.0.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Hover,
    Manual,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Hover => "hover",
            Verdict::Manual => "manual",
        })
    }
}

/// Outcome of one arbitration, kept in trajectory logs for audit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arbitration {
    pub effective: Action,
    pub verdict: Verdict,
    /// η of the predicted position.
    pub eta: u8,
    /// Predicted UAV position `[x, y, z]` after the lookahead.
    pub predicted: [f64; 3],
    pub margin: Option<MarginId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Arbiter {
    pub safety: SafetyConfig,
    pub dynamics: Dynamics,
    pub dt: f64,
    /// Steps of lookahead under the candidate action.
    pub lookahead: usize,
    /// Overrides older than this (s) are ignored.
    pub staleness: f64,
}

impl Arbiter {
    pub fn new(safety: SafetyConfig, dynamics: Dynamics, dt: f64) -> Self {
        Self { safety, dynamics, dt, lookahead: 1, staleness: 1.0 }
    }

    fn live_override<'a>(&self, cmd: Option<&'a OverrideCommand>, now: f64) -> Option<&'a OverrideCommand> {
        let cmd = cmd?;
        if now - cmd.timestamp > self.staleness {
            log::warn!(
                "ignoring stale override from {} issued at t={:.3}s (now {:.3}s)",
                cmd.source,
                cmd.timestamp,
                now
            );
            return None;
        }
        Some(cmd)
    }

    /// Choose the action to apply at `world`.
    pub fn arbitrate(
        &self,
        proposed: Action,
        world: &WorldState,
        spec: &ManoeuvreSpec,
        override_cmd: Option<&OverrideCommand>,
    ) -> Result<Arbitration, SafetyError> {
        let manual = self
            .live_override(override_cmd, world.t)
            .filter(|c| c.mode == ControlMode::Manual);
        let (candidate, verdict) = match manual {
            Some(cmd) => (Action::from_array(cmd.manual_action.as_array()), Verdict::Manual),
            None => (proposed, Verdict::Pass),
        };
        let mut state = *world;
        let mut margin = None;
        for _ in 0..self.lookahead.max(1) {
            state = step_world(&state, &candidate, self.dt, spec, &self.dynamics)?;
            margin = active_margin_3d(state.uav.ground(), state.uav.z, &self.safety);
            if margin.is_some() {
                break;
            }
        }
        let predicted = [state.uav.x, state.uav.y, state.uav.z];
        Ok(match margin {
            Some(_) => Arbitration { effective: Action::ZERO, verdict: Verdict::Hover, eta: 1, predicted, margin },
            None => Arbitration { effective: candidate, verdict, eta: 0, predicted, margin: None },
        })
    }

    /// Apply an arbitration: hover holds the UAV in place, otherwise the world
    /// steps under the effective action. UGVs whose scripted next position is
    /// unsafe stop where they are; the returned flags mark them.
    pub fn advance(
        &self,
        world: &WorldState,
        arbitration: &Arbitration,
        spec: &ManoeuvreSpec,
    ) -> Result<(WorldState, [bool; UGV_COUNT]), SafetyError> {
        let mut next = match arbitration.verdict {
            Verdict::Hover => hold_position(world, self.dt, spec)?,
            _ => step_world(world, &arbitration.effective, self.dt, spec, &self.dynamics)?,
        };
        let mut stopped = [false; UGV_COUNT];
        for (i, p) in next.ugv.iter_mut().enumerate() {
            if check_unsafe_ugv(*p, &self.safety) == 1 {
                *p = world.ugv[i];
                stopped[i] = true;
            }
        }
        Ok((next, stopped))
    }
}

//! Deterministic discrete-time world: UAV kinematics, scripted UGV formations
//! and the downward pinhole camera.

mod arena;
mod camera;
mod geometry;
mod manoeuvre;

pub use arena::{Arena, Preset};
pub use camera::{build_observation, project_to_image, CameraModel, ImagePoint, Observation, ObservationModel};
pub use geometry::{enclosing_circle, Circle, Point2};
pub use manoeuvre::{formation_positions, ManoeuvreKind, ManoeuvreSpec, Segment, FORMATION_BASE_RADIUS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default simulator step in seconds.
pub const DEFAULT_DT: f64 = 0.05;
pub const OBSERVATION_DIM: usize = 11;
pub const ACTION_DIM: usize = 4;
pub const UGV_COUNT: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("action component {index} is not finite ({value})")]
    NonFiniteAction { index: usize, value: f64 },
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("altitude {altitude} m is at or below the projection floor {floor} m")]
    DegenerateProjection { altitude: f64, floor: f64 },
    #[error("enclosing circle of an empty point set")]
    EmptyPointSet,
    #[error("exact enclosing circle supports at most 3 points, got {0}")]
    TooManyPoints(usize),
    #[error("invalid manoeuvre: {0}")]
    InvalidManoeuvre(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// Normalized UAV command `(pitch φ, roll χ, vertical ψ, yaw rate ω)`.
///
/// Components are clamped to `[-1, 1]` on construction. Non-finite values are
/// kept as-is so callers can detect and reject them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Action([f64; 4]);

impl Action {
    pub const ZERO: Action = Action([0.0; 4]);

    pub fn new(pitch: f64, roll: f64, vertical: f64, yaw_rate: f64) -> Self {
        Self::from_array([pitch, roll, vertical, yaw_rate])
    }

    pub fn from_array(values: [f64; 4]) -> Self {
        Action(values.map(|v| if v.is_nan() { v } else { v.clamp(-1.0, 1.0) }))
    }

    pub fn pitch(&self) -> f64 {
        self.0[0]
    }

    pub fn roll(&self) -> f64 {
        self.0[1]
    }

    pub fn vertical(&self) -> f64 {
        self.0[2]
    }

    pub fn yaw_rate(&self) -> f64 {
        self.0[3]
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }

    pub fn check_finite(&self) -> Result<(), SimError> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(SimError::NonFiniteAction { index, value: self.0[index] }),
            None => Ok(()),
        }
    }
}

impl From<[f64; 4]> for Action {
    fn from(values: [f64; 4]) -> Self {
        Action::from_array(values)
    }
}

impl From<Action> for [f64; 4] {
    fn from(a: Action) -> Self {
        a.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityLimits {
    /// m/s, shared by the pitch and roll channels.
    pub horizontal: f64,
    /// m/s
    pub vertical: f64,
    /// rad/s
    pub yaw: f64,
}

impl VelocityLimits {
    pub fn as_array(&self) -> [f64; 4] {
        [self.horizontal, self.horizontal, self.vertical, self.yaw]
    }
}

impl Default for VelocityLimits {
    fn default() -> Self {
        Self { horizontal: 1.0, vertical: 0.5, yaw: 0.5 }
    }
}

/// First-order velocity response parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    /// Time constant in seconds.
    pub tau: f64,
    pub v_max: VelocityLimits,
    /// The UAV never descends below this height (m).
    pub ground_clearance: f64,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self { tau: 0.5, v_max: VelocityLimits::default(), ground_clearance: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub heading: f64,
}

impl UavPose {
    pub fn ground(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

/// Channel velocities of the UAV, aligned with the action components.
///
/// Pitch and roll follow the tilt convention: a positive pitch (roll) velocity
/// moves the vehicle along its body −x (−y) axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UavVelocity {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub yaw_rate: f64,
}

impl UavVelocity {
    pub fn as_array(&self) -> [f64; 4] {
        [self.vx, self.vy, self.vz, self.yaw_rate]
    }

    fn from_array([vx, vy, vz, yaw_rate]: [f64; 4]) -> Self {
        Self { vx, vy, vz, yaw_rate }
    }

    /// World-frame ground velocity implied by the channel velocities.
    pub fn ground_velocity(&self, heading: f64) -> Point2 {
        Point2::new(-self.vx, -self.vy).rotated(heading)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub t: f64,
    pub uav: UavPose,
    pub uav_vel: UavVelocity,
    pub ugv: [Point2; UGV_COUNT],
    /// Progress through the manoeuvre in `[0, 1]`.
    pub phase: f64,
}

impl WorldState {
    /// UAV at rest at `uav`, UGVs at their scripted start positions.
    pub fn initial(uav: UavPose, spec: &ManoeuvreSpec) -> Self {
        Self {
            t: 0.0,
            uav,
            uav_vel: UavVelocity::default(),
            ugv: formation_positions(spec, 0.0),
            phase: 0.0,
        }
    }

    /// Stable fingerprint of the exact bit patterns of every field.
    pub fn bit_hash(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let mut put = |v: f64| v.to_bits().hash(&mut h);
        put(self.t);
        for v in [self.uav.x, self.uav.y, self.uav.z, self.uav.heading] {
            put(v);
        }
        for v in self.uav_vel.as_array() {
            put(v);
        }
        for p in self.ugv {
            put(p.x);
            put(p.y);
        }
        put(self.phase);
        h.finish()
    }
}

fn check_dt(dt: f64) -> Result<(), SimError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(SimError::InvalidStep(dt))
    }
}

fn advance_clock(world: &WorldState, dt: f64, spec: &ManoeuvreSpec) -> (f64, [Point2; UGV_COUNT], f64) {
    let t = world.t + dt;
    let phase = if spec.duration() > 0.0 { (t / spec.duration()).min(1.0) } else { 1.0 };
    (t, formation_positions(spec, t), phase)
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Advance the world by one step of `dt` seconds under `action`.
///
/// Velocities follow `v' = v + (V_max·a − v)·min(dt/τ, 1)` and positions are
/// integrated by explicit Euler with the updated velocity. UGVs are placed on
/// their scripted tracks at the new time.
pub fn step_world(
    world: &WorldState,
    action: &Action,
    dt: f64,
    spec: &ManoeuvreSpec,
    dynamics: &Dynamics,
) -> Result<WorldState, SimError> {
    action.check_finite()?;
    check_dt(dt)?;
    let gain = (dt / dynamics.tau).min(1.0);
    let limits = dynamics.v_max.as_array();
    let cmd = action.as_array();
    let v = world.uav_vel.as_array();
    let mut next_v = [0.0; 4];
    for i in 0..4 {
        next_v[i] = v[i] + (limits[i] * cmd[i] - v[i]) * gain;
    }
    let mut vel = UavVelocity::from_array(next_v);

    let ground = vel.ground_velocity(world.uav.heading);
    let mut z = world.uav.z + vel.vz * dt;
    if z < dynamics.ground_clearance {
        z = dynamics.ground_clearance;
        vel.vz = 0.0;
    }
    let uav = UavPose {
        x: world.uav.x + ground.x * dt,
        y: world.uav.y + ground.y * dt,
        z,
        heading: wrap_angle(world.uav.heading + vel.yaw_rate * dt),
    };
    let (t, ugv, phase) = advance_clock(world, dt, spec);
    Ok(WorldState { t, uav, uav_vel: vel, ugv, phase })
}

/// Forced hover: the UAV holds its pose with zero velocity while the clock
/// and the UGV program advance.
pub fn hold_position(world: &WorldState, dt: f64, spec: &ManoeuvreSpec) -> Result<WorldState, SimError> {
    check_dt(dt)?;
    let (t, ugv, phase) = advance_clock(world, dt, spec);
    Ok(WorldState { t, uav: world.uav, uav_vel: UavVelocity::default(), ugv, phase })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (WorldState, ManoeuvreSpec) {
        let spec = ManoeuvreSpec::preset(ManoeuvreKind::FixedAltitude, &Arena::preset(Preset::Sim));
        let world = WorldState::initial(UavPose { x: 0.0, y: 0.0, z: 1.5, heading: 0.0 }, &spec);
        (world, spec)
    }

    #[test]
    fn zero_command_keeps_uav_still() {
        let (world, spec) = setup();
        let next = step_world(&world, &Action::ZERO, DEFAULT_DT, &spec, &Dynamics::default()).unwrap();
        assert_eq!(next.uav, world.uav);
        assert_eq!(next.t, world.t + DEFAULT_DT);
        assert_ne!(next.ugv, world.ugv);
    }

    #[test]
    fn first_order_response_matches_hand_value() {
        let (world, spec) = setup();
        let dynamics = Dynamics { tau: 0.5, v_max: VelocityLimits { horizontal: 1.0, ..Default::default() }, ..Default::default() };
        let next = step_world(&world, &Action::new(1.0, 0.0, 0.0, 0.0), 0.05, &spec, &dynamics).unwrap();
        assert!((next.uav_vel.vx - 0.1).abs() < 1e-15);
        // Positive pitch moves the vehicle toward −x at heading 0.
        assert!(next.uav.x < 0.0);
    }

    #[test]
    fn stepping_is_bitwise_deterministic() {
        let (world, spec) = setup();
        let a = Action::new(0.3, -0.7, 0.2, 0.1);
        let d = Dynamics::default();
        let h1 = step_world(&world, &a, 0.05, &spec, &d).unwrap().bit_hash();
        let h2 = step_world(&world, &a, 0.05, &spec, &d).unwrap().bit_hash();
        assert_eq!(h1, h2);
    }

    #[test]
    fn non_finite_actions_and_bad_steps_are_rejected() {
        let (world, spec) = setup();
        let d = Dynamics::default();
        let bad = Action::new(0.0, f64::NAN, 0.0, 0.0);
        assert!(matches!(
            step_world(&world, &bad, 0.05, &spec, &d),
            Err(SimError::NonFiniteAction { index: 1, .. })
        ));
        assert!(step_world(&world, &Action::ZERO, 0.0, &spec, &d).is_err());
    }

    #[test]
    fn actions_are_clamped() {
        let a = Action::new(3.0, -2.0, 0.5, f64::INFINITY);
        assert_eq!(a.as_array(), [1.0, -1.0, 0.5, 1.0]);
    }

    #[test]
    fn altitude_never_reaches_the_ground() {
        let (mut world, spec) = setup();
        let d = Dynamics::default();
        for _ in 0..400 {
            world = step_world(&world, &Action::new(0.0, 0.0, -1.0, 0.0), 0.05, &spec, &d).unwrap();
            assert!(world.uav.z > 0.0);
        }
        assert_eq!(world.uav.z, d.ground_clearance);
    }

    #[test]
    fn hover_holds_pose() {
        let (world, spec) = setup();
        let moving = step_world(&world, &Action::new(1.0, 1.0, 1.0, 0.0), 0.05, &spec, &Dynamics::default()).unwrap();
        let held = hold_position(&moving, 0.05, &spec).unwrap();
        assert_eq!(held.uav, moving.uav);
        assert_eq!(held.uav_vel, UavVelocity::default());
    }
}

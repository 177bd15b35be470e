//! Downward-looking pinhole camera and the 11-D observation built from it.

use serde::{Deserialize, Serialize};

use super::{Point2, SimError, UavPose, VelocityLimits, WorldState, OBSERVATION_DIM, UGV_COUNT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Half field-of-view angle α in radians.
    pub half_fov: f64,
    pub focal: f64,
    /// Half-width of the image plane, `focal · tan α`.
    pub image_extent: f64,
    /// Projection is refused at or below this altitude (m).
    pub min_altitude: f64,
}

impl CameraModel {
    pub fn new(focal: f64, half_fov: f64) -> Result<Self, SimError> {
        if !(half_fov > 0.0 && half_fov < std::f64::consts::FRAC_PI_2) {
            return Err(SimError::InvalidCamera(format!("half field of view {half_fov} rad outside (0, π/2)")));
        }
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(SimError::InvalidCamera(format!("focal scale must be positive, got {focal}")));
        }
        Ok(Self { half_fov, focal, image_extent: focal * half_fov.tan(), min_altitude: 0.05 })
    }
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::new(1.0, 32f64.to_radians()).unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
    pub visible: bool,
}

impl ImagePoint {
    pub fn point(&self) -> Point2 {
        Point2::new(self.u, self.v)
    }
}

/// Project a ground point into the UAV's downward image.
pub fn project_to_image(cam: &CameraModel, uav: &UavPose, p: Point2) -> Result<ImagePoint, SimError> {
    if !(uav.z > cam.min_altitude) {
        return Err(SimError::DegenerateProjection { altitude: uav.z, floor: cam.min_altitude });
    }
    let scale = cam.focal / uav.z;
    let img = Point2::new((p.x - uav.x) * scale, (p.y - uav.y) * scale).rotated(-uav.heading);
    Ok(ImagePoint { u: img.x, v: img.y, visible: img.norm() <= cam.image_extent })
}

/// Policy input, in the fixed component order of [`Observation::to_vector`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Image centre; always the origin for the downward camera.
    pub uav_center: Point2,
    /// Centroid of the visible UGVs in the image.
    pub ugv_center: Point2,
    /// Metres.
    pub altitude: f64,
    /// Ideal UGV spread ν in image units.
    pub ideal_radius: f64,
    /// Actual spread ν̂: farthest visible UGV from `ugv_center`.
    pub actual_radius: f64,
    /// Channel velocities normalized by their limits.
    pub velocity: [f64; 4],
    /// False when no UGV was visible and the image quantities are held.
    pub valid: bool,
    pub visible: [bool; UGV_COUNT],
}

impl Observation {
    pub fn to_vector(&self) -> [f64; OBSERVATION_DIM] {
        let [p, r, z, w] = self.velocity;
        [
            self.uav_center.x,
            self.uav_center.y,
            self.ugv_center.x,
            self.ugv_center.y,
            self.altitude,
            self.ideal_radius,
            self.actual_radius,
            p,
            r,
            z,
            w,
        ]
    }

    pub fn all_visible(&self) -> bool {
        self.visible.iter().all(|&v| v)
    }

    /// Image-plane offset between the camera centre and the UGV centroid.
    pub fn center_error(&self) -> f64 {
        self.uav_center.distance(self.ugv_center)
    }
}

/// Everything needed to turn a world state into an observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub camera: CameraModel,
    /// Target image radius R* of the UGV spread.
    pub target_radius: f64,
    pub v_max: VelocityLimits,
}

impl ObservationModel {
    pub fn new(camera: CameraModel, target_fraction: f64, v_max: VelocityLimits) -> Self {
        Self { camera, target_radius: target_fraction * camera.image_extent, v_max }
    }

    /// Altitude at which a formation of world radius `radius` shows the target spread.
    pub fn framing_altitude(&self, radius: f64) -> f64 {
        self.camera.focal * radius / self.target_radius
    }

    pub fn observe(&self, world: &WorldState, prev: Option<&Observation>) -> Result<Observation, SimError> {
        build_observation(world, self, prev)
    }
}

impl Default for ObservationModel {
    fn default() -> Self {
        Self::new(CameraModel::default(), 0.6, VelocityLimits::default())
    }
}

/// Build the observation for `world`.
///
/// When no UGV is visible, the centroid and spread of `prev` are held and the
/// observation is flagged invalid.
pub fn build_observation(
    world: &WorldState,
    model: &ObservationModel,
    prev: Option<&Observation>,
) -> Result<Observation, SimError> {
    let mut visible = [false; UGV_COUNT];
    let mut points = Vec::with_capacity(UGV_COUNT);
    for (i, p) in world.ugv.iter().enumerate() {
        let img = project_to_image(&model.camera, &world.uav, *p)?;
        visible[i] = img.visible;
        if img.visible {
            points.push(img.point());
        }
    }
    let limits = model.v_max.as_array();
    let raw = world.uav_vel.as_array();
    let velocity = std::array::from_fn(|i| raw[i] / limits[i]);

    let (ugv_center, actual_radius, valid) = if points.is_empty() {
        match prev {
            Some(p) => (p.ugv_center, p.actual_radius, false),
            None => (Point2::ORIGIN, 0.0, false),
        }
    } else {
        let n = points.len() as f64;
        let sum = points.iter().fold(Point2::ORIGIN, |acc, p| acc + *p);
        let c = Point2::new(sum.x / n, sum.y / n);
        let spread = points.iter().map(|p| c.distance(*p)).fold(0.0, f64::max);
        (c, spread, true)
    };
    Ok(Observation {
        uav_center: Point2::ORIGIN,
        ugv_center,
        altitude: world.uav.z,
        ideal_radius: model.target_radius,
        actual_radius,
        velocity,
        valid,
        visible,
    })
}

use serde::{Deserialize, Serialize};

use super::Point2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 10 × 10 m simulated arena centred on the origin.
    Sim,
    /// 6.6 × 5 m motion-capture lab, safe area x ∈ [−3.3, 3.3], y ∈ [−2.5, 2.5].
    Lab,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(Preset::Sim),
            "lab" => Ok(Preset::Lab),
            other => Err(format!("unknown preset `{other}` (expected sim or lab)")),
        }
    }
}

/// Axis-aligned environment rectangle in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Arena {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Sim => Arena { x_min: -5.0, x_max: 5.0, y_min: -5.0, y_max: 5.0 },
            Preset::Lab => Arena { x_min: -3.3, x_max: 3.3, y_min: -2.5, y_max: 2.5 },
        }
    }

    pub fn center(&self) -> Point2 {
        Point2::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn half_extents(&self) -> (f64, f64) {
        (0.5 * (self.x_max - self.x_min), 0.5 * (self.y_max - self.y_min))
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }
}

use serde::{Deserialize, Serialize};

use super::{Dim, Sign, SubTaskSpec};
use crate::sim::{Action, Observation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertGains {
    /// Pitch/roll gain when horizontal tracking is the sub-task's job.
    pub horizontal: f64,
    /// Vertical gain on the spread error ν̂ − ν.
    pub vertical: f64,
    /// Pitch/roll gain for sub-tasks that only keep the formation centred.
    pub centering: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        Self { horizontal: 3.0, vertical: 3.0, centering: 1.5 }
    }
}

/// Proportional controller standing in for a human demonstrator.
///
/// Pitch and roll push the UGV centroid back to the image centre
/// (a positive image-x error commands negative pitch), the vertical channel
/// climbs while the spread exceeds its ideal value, and yaw is always zero.
/// Channels outside the sub-task's active set output exactly 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedExpert {
    task: SubTaskSpec,
    gains: ExpertGains,
}

impl ScriptedExpert {
    pub fn new(task: SubTaskSpec, gains: ExpertGains) -> Self {
        Self { task, gains }
    }

    pub fn task(&self) -> &SubTaskSpec {
        &self.task
    }

    fn horizontal_gain(&self) -> f64 {
        let distinguishing = self
            .task
            .distinguishing
            .iter()
            .any(|d| matches!(d.dim, Dim::Pitch | Dim::Roll));
        if distinguishing || self.task.distinguishing.is_empty() {
            self.gains.horizontal
        } else {
            self.gains.centering
        }
    }

    pub fn act(&self, obs: &Observation) -> Action {
        let err = obs.ugv_center - obs.uav_center;
        let k = self.horizontal_gain();
        let mut vertical = self.gains.vertical * (obs.actual_radius - obs.ideal_radius);
        for d in self.task.distinguishing.iter().filter(|d| d.dim == Dim::Vertical) {
            vertical = match d.sign {
                Sign::Positive => vertical.max(0.0),
                Sign::Negative => vertical.min(0.0),
                Sign::Any => vertical,
            };
        }
        let raw = [-k * err.x, -k * err.y, vertical, 0.0];
        let mut out = [0.0; 4];
        for d in self.task.active.iter() {
            out[d.index()] = raw[d.index()];
        }
        Action::from_array(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{ManoeuvreKind, Point2};
    use proptest::prelude::*;

    fn obs(x: f64, y: f64, ideal: f64, actual: f64) -> Observation {
        Observation {
            uav_center: Point2::ORIGIN,
            ugv_center: Point2::new(x, y),
            altitude: 1.5,
            ideal_radius: ideal,
            actual_radius: actual,
            velocity: [0.0; 4],
            valid: true,
            visible: [true; 3],
        }
    }

    #[test]
    fn centred_and_framed_gives_zero_action() {
        for kind in [ManoeuvreKind::FixedAltitude, ManoeuvreKind::Climb, ManoeuvreKind::Combined] {
            let e = ScriptedExpert::new(SubTaskSpec::preset(kind, false), ExpertGains::default());
            assert_eq!(e.act(&obs(0.0, 0.0, 0.4, 0.4)), Action::ZERO);
        }
    }

    #[test]
    fn proportional_pitch_hand_value() {
        let gains = ExpertGains { horizontal: 2.0, ..Default::default() };
        let e = ScriptedExpert::new(SubTaskSpec::preset(ManoeuvreKind::FixedAltitude, false), gains);
        let a = e.act(&obs(0.1, 0.0, 0.4, 0.6));
        assert!((a.pitch() + 0.2).abs() < 1e-15);
        // Vertical is not an active channel for fixed altitude.
        assert_eq!(a.vertical(), 0.0);
    }

    #[test]
    fn climb_and_descend_respect_their_sign() {
        let climb = ScriptedExpert::new(SubTaskSpec::preset(ManoeuvreKind::Climb, false), ExpertGains::default());
        assert!(climb.act(&obs(0.0, 0.0, 0.4, 0.5)).vertical() > 0.0);
        assert_eq!(climb.act(&obs(0.0, 0.0, 0.4, 0.3)).vertical(), 0.0);
        let descend = ScriptedExpert::new(SubTaskSpec::preset(ManoeuvreKind::Descend, false), ExpertGains::default());
        assert!(descend.act(&obs(0.0, 0.0, 0.4, 0.3)).vertical() < 0.0);
        assert_eq!(descend.act(&obs(0.0, 0.0, 0.4, 0.5)).vertical(), 0.0);
    }

    #[test]
    fn strict_climb_only_moves_vertically() {
        let e = ScriptedExpert::new(SubTaskSpec::preset(ManoeuvreKind::Climb, true), ExpertGains::default());
        let a = e.act(&obs(0.3, -0.2, 0.4, 0.5));
        assert_eq!((a.pitch(), a.roll(), a.yaw_rate()), (0.0, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn output_is_bounded(x in -10.0f64..10.0, y in -10.0f64..10.0, r in 0.0f64..10.0) {
            let e = ScriptedExpert::new(SubTaskSpec::preset(ManoeuvreKind::Combined, false), ExpertGains::default());
            let a = e.act(&obs(x, y, 0.375, r));
            prop_assert!(a.as_array().iter().all(|v| v.abs() <= 1.0));
        }
    }
}

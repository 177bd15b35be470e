//! Closed-loop episodes, the centring and spread error metrics, and
//! setup-level aggregation.

mod archive;
mod episode;
mod setup;

pub use archive::{load_trajectory, parse_trajectory, plot_table, store_trajectory, trajectory_to_text};
pub use episode::{record_demonstrations, run_episode, EpisodeContext, Policy, RandomPolicy, ZeroPolicy};
pub use setup::{report_table, run_setup, Setup, SetupReport, SetupSource};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::safety::{Arbitration, SafetyError, Verdict};
use crate::sim::{project_to_image, Action, CameraModel, ManoeuvreKind, ManoeuvreSpec, Observation, SimError, WorldState, UGV_COUNT};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error("episode aborted: {0}")]
    Aborted(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("trajectory archive error at line {line}: {message}")]
    Archive { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One closed-loop step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub world: WorldState,
    pub observation: Observation,
    /// What the policy (or operator) asked for.
    pub proposed: Action,
    pub arbitration: Arbitration,
    /// UGVs held in place by their margin check after this step.
    pub ugv_stopped: [bool; UGV_COUNT],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub policy_id: String,
    pub manoeuvre: ManoeuvreKind,
    pub dt: f64,
    pub seed: u64,
    pub spec: ManoeuvreSpec,
    pub records: Vec<StepRecord>,
    /// Set when the episode stopped early (e.g. a non-finite policy output).
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Per-step error series and its summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    /// Riemann sum of the per-step values times `dt`.
    pub integral: f64,
    pub per_step: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Steps whose observation held stale image quantities.
    pub invalid_steps: usize,
}

impl ErrorSeries {
    fn from_steps(per_step: Vec<f64>, dt: f64, invalid_steps: usize) -> Self {
        let integral = per_step.iter().sum::<f64>() * dt;
        let MeanStd { mean, std } = MeanStd::of(&per_step);
        Self { integral, per_step, mean, std, invalid_steps }
    }
}

fn invalid_steps(tr: &Trajectory) -> usize {
    tr.records.iter().filter(|r| !r.observation.valid).count()
}

/// Centring error: `‖(x^A, y^A) − (x^G, y^G)‖₂` per step, integrated over time.
///
/// Steps without a visible UGV contribute their held values.
pub fn distance_error(tr: &Trajectory) -> ErrorSeries {
    let per_step = tr.records.iter().map(|r| r.observation.center_error()).collect();
    ErrorSeries::from_steps(per_step, tr.dt, invalid_steps(tr))
}

/// Spread error: `(ν − ν̂)²` per step, integrated over time.
pub fn radius_error(tr: &Trajectory) -> ErrorSeries {
    let per_step = tr
        .records
        .iter()
        .map(|r| {
            let e = r.observation.ideal_radius - r.observation.actual_radius;
            e * e
        })
        .collect();
    ErrorSeries::from_steps(per_step, tr.dt, invalid_steps(tr))
}

/// Fraction of steps with every UGV inside the image, from the logged flags.
pub fn coverage(tr: &Trajectory) -> f64 {
    if tr.is_empty() {
        return 0.0;
    }
    let covered = tr.records.iter().filter(|r| r.observation.all_visible()).count();
    covered as f64 / tr.len() as f64
}

/// Coverage recomputed by re-projecting the logged world states.
pub fn coverage_from_world(tr: &Trajectory, cam: &CameraModel) -> Result<f64, SimError> {
    if tr.is_empty() {
        return Ok(0.0);
    }
    let mut covered = 0usize;
    for r in &tr.records {
        let mut all = true;
        for p in r.world.ugv {
            all &= project_to_image(cam, &r.world.uav, p)?.visible;
        }
        covered += all as usize;
    }
    Ok(covered as f64 / tr.len() as f64)
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Integrated centring error δd (image units · s).
    pub delta_d: f64,
    /// Integrated spread error δν (image units² · s).
    pub delta_nu: f64,
    pub distance: MeanStd,
    /// Per-step mean of the squared centring distance.
    pub mean_sq_distance: f64,
    /// Per-step mean centring distance converted to metres on the ground.
    pub mean_distance_m: f64,
    pub radius: MeanStd,
    pub coverage: f64,
    pub hover_count: usize,
    /// Seconds spent under manual override.
    pub manual_duration: f64,
    pub invalid_steps: usize,
    pub steps: usize,
    pub aborted: Option<String>,
}

impl MetricsReport {
    pub fn from_trajectory(tr: &Trajectory) -> Self {
        let d = distance_error(tr);
        let r = radius_error(tr);
        let n = tr.len().max(1) as f64;
        let mean_sq_distance = d.per_step.iter().map(|v| v * v).sum::<f64>() / n;
        let mean_distance_m = tr
            .records
            .iter()
            .zip(&d.per_step)
            .map(|(rec, e)| e * rec.world.uav.z)
            .sum::<f64>()
            / n;
        let count = |v: Verdict| tr.records.iter().filter(|r| r.arbitration.verdict == v).count();
        Self {
            delta_d: d.integral,
            delta_nu: r.integral,
            distance: MeanStd { mean: d.mean, std: d.std },
            mean_sq_distance,
            mean_distance_m,
            radius: MeanStd { mean: r.mean, std: r.std },
            coverage: coverage(tr),
            hover_count: count(Verdict::Hover),
            manual_duration: count(Verdict::Manual) as f64 * tr.dt,
            invalid_steps: d.invalid_steps,
            steps: tr.len(),
            aborted: tr.aborted.clone(),
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::sim::{Arena, Point2, Preset, UavPose};

    /// Trajectory whose observations carry the given centroid offsets and spread errors.
    pub(crate) fn scripted_trajectory(offsets: &[(f64, f64)], spread_err: &[f64], dt: f64) -> Trajectory {
        let spec = ManoeuvreSpec::preset(ManoeuvreKind::Combined, &Arena::preset(Preset::Sim));
        let world = WorldState::initial(UavPose { x: 0.0, y: 0.0, z: 2.0, heading: 0.0 }, &spec);
        let records = offsets
            .iter()
            .zip(spread_err)
            .enumerate()
            .map(|(i, (&(x, y), &e))| StepRecord {
                t: i as f64 * dt,
                world,
                observation: Observation {
                    uav_center: Point2::ORIGIN,
                    ugv_center: Point2::new(x, y),
                    altitude: 2.0,
                    ideal_radius: 0.4,
                    actual_radius: 0.4 - e,
                    velocity: [0.0; 4],
                    valid: true,
                    visible: [true; 3],
                },
                proposed: Action::ZERO,
                arbitration: Arbitration {
                    effective: Action::ZERO,
                    verdict: Verdict::Pass,
                    eta: 0,
                    predicted: [0.0, 0.0, 2.0],
                    margin: None,
                },
                ugv_stopped: [false; 3],
            })
            .collect();
        Trajectory {
            policy_id: "test".into(),
            manoeuvre: ManoeuvreKind::Combined,
            dt,
            seed: 0,
            spec,
            records,
            aborted: None,
        }
    }

    #[test]
    fn distance_error_hand_sum() {
        let tr = scripted_trajectory(&[(3.0, 4.0), (0.0, 0.0), (1.0, 0.0)], &[0.0; 3], 0.05);
        let d = distance_error(&tr);
        assert!((d.integral - 0.3).abs() < 1e-15);
        assert_eq!(d.per_step, vec![5.0, 0.0, 1.0]);
        assert!((d.mean - 2.0).abs() < 1e-15);
    }

    #[test]
    fn centred_trajectory_has_zero_errors() {
        let tr = scripted_trajectory(&[(0.0, 0.0); 5], &[0.0; 5], 0.05);
        assert_eq!(distance_error(&tr).integral, 0.0);
        assert_eq!(radius_error(&tr).integral, 0.0);
    }

    #[test]
    fn radius_error_hand_sum() {
        let tr = scripted_trajectory(&[(0.0, 0.0); 2], &[0.2, -0.1], 0.05);
        let r = radius_error(&tr);
        assert!((r.integral - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn radius_error_is_symmetric_in_swap() {
        let mut tr = scripted_trajectory(&[(0.0, 0.0); 3], &[0.2, -0.1, 0.05], 0.05);
        let before = radius_error(&tr).integral;
        for r in &mut tr.records {
            let o = &mut r.observation;
            std::mem::swap(&mut o.ideal_radius, &mut o.actual_radius);
        }
        assert_eq!(radius_error(&tr).integral, before);
    }

    #[test]
    fn distance_error_is_rotation_invariant() {
        let offsets = [(0.3, -0.1), (0.05, 0.2), (-0.4, 0.0)];
        let base = distance_error(&scripted_trajectory(&offsets, &[0.0; 3], 0.05)).integral;
        let rotated: Vec<_> = offsets
            .iter()
            .map(|&(x, y)| {
                let p = Point2::new(x, y).rotated(0.83);
                (p.x, p.y)
            })
            .collect();
        let rot = distance_error(&scripted_trajectory(&rotated, &[0.0; 3], 0.05)).integral;
        assert!((base - rot).abs() < 1e-15);
    }

    #[test]
    fn mean_std_single_value_has_zero_spread() {
        assert_eq!(MeanStd::of(&[3.5]), MeanStd { mean: 3.5, std: 0.0 });
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }
}

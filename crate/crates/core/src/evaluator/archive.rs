//! Line-delimited trajectory archives and plot tables.
//!
//! ```text
//! {"record":"trajectory","version":1,"policy_id":"mlp-…","manoeuvre":"combined","dt":0.05,"seed":7,"spec":{…}}
//! {"record":"step","t":0.0,"world":{…},"observation":{…},"proposed":[…],"arbitration":{…},"ugv_stopped":[…]}
//! {"record":"end","steps":546,"aborted":null}
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{distance_error, radius_error, EvalError, StepRecord, Trajectory};
use crate::sim::{ManoeuvreKind, ManoeuvreSpec};

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    policy_id: String,
    manoeuvre: ManoeuvreKind,
    dt: f64,
    seed: u64,
    spec: ManoeuvreSpec,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct End {
    steps: usize,
    aborted: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Trajectory(Header),
    Step(StepRecord),
    End(End),
}

pub fn trajectory_to_text(tr: &Trajectory) -> String {
    let mut out = String::new();
    let mut push = |line: &Line| {
        out.push_str(&serde_json::to_string(line).expect("trajectory records serialize"));
        out.push('\n');
    };
    push(&Line::Trajectory(Header {
        version: ARCHIVE_VERSION,
        policy_id: tr.policy_id.clone(),
        manoeuvre: tr.manoeuvre,
        dt: tr.dt,
        seed: tr.seed,
        spec: tr.spec.clone(),
    }));
    for r in &tr.records {
        push(&Line::Step(r.clone()));
    }
    push(&Line::End(End { steps: tr.len(), aborted: tr.aborted.clone() }));
    out
}

pub fn store_trajectory(tr: &Trajectory, path: impl AsRef<Path>) -> Result<(), EvalError> {
    std::fs::write(path, trajectory_to_text(tr))?;
    Ok(())
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory, EvalError> {
    parse_trajectory(&std::fs::read_to_string(path)?)
}

/// Decode an archive. The end record is required, so truncated files are
/// rejected rather than silently shortened.
pub fn parse_trajectory(text: &str) -> Result<Trajectory, EvalError> {
    let mut tr: Option<Trajectory> = None;
    let mut ended = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Archive { line, message };
        if ended {
            return Err(err("content after end record".into()));
        }
        let parsed: Line = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        match (parsed, tr.as_mut()) {
            (Line::Trajectory(h), None) => {
                if h.version != ARCHIVE_VERSION {
                    return Err(err(format!("unsupported archive version {}", h.version)));
                }
                if !(h.dt.is_finite() && h.dt > 0.0) {
                    return Err(err("dt must be positive".into()));
                }
                tr = Some(Trajectory {
                    policy_id: h.policy_id,
                    manoeuvre: h.manoeuvre,
                    dt: h.dt,
                    seed: h.seed,
                    spec: h.spec,
                    records: Vec::new(),
                    aborted: None,
                });
            }
            (Line::Trajectory(_), Some(_)) => return Err(err("duplicate header".into())),
            (_, None) => return Err(err("record before header".into())),
            (Line::Step(r), Some(t)) => t.records.push(r),
            (Line::End(e), Some(t)) => {
                if e.steps != t.records.len() {
                    return Err(err(format!("end record declares {} steps, found {}", e.steps, t.records.len())));
                }
                t.aborted = e.aborted;
                ended = true;
            }
        }
    }
    match tr {
        None => Err(EvalError::Archive { line: 0, message: "missing header".into() }),
        Some(_) if !ended => Err(EvalError::Archive { line: 0, message: "missing end record".into() }),
        Some(t) => Ok(t),
    }
}

/// Whitespace-separated columns for plotting one trajectory.
pub fn plot_table(tr: &Trajectory) -> String {
    let d = distance_error(tr);
    let r = radius_error(tr);
    let mut out = String::from("t x y z ugv_x ugv_y img_x img_y nu nu_hat dist_err radius_err verdict\n");
    for (i, rec) in tr.records.iter().enumerate() {
        let centroid = rec.world.ugv.iter().fold(crate::sim::Point2::ORIGIN, |a, p| a + *p) * (1.0 / 3.0);
        let o = &rec.observation;
        let _ = writeln!(
            out,
            "{:.3} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6e} {:.6e} {:?}",
            rec.t,
            rec.world.uav.x,
            rec.world.uav.y,
            rec.world.uav.z,
            centroid.x,
            centroid.y,
            o.ugv_center.x,
            o.ugv_center.y,
            o.ideal_radius,
            o.actual_radius,
            d.per_step[i],
            r.per_step[i],
            rec.arbitration.verdict,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{run_episode, EpisodeContext, RandomPolicy};
    use crate::safety::{Arbiter, SafetyConfig};
    use crate::sim::{Arena, Dynamics, ObservationModel, Preset, DEFAULT_DT};

    fn sample() -> Trajectory {
        let arena = Arena::preset(Preset::Sim);
        let arbiter = Arbiter::new(SafetyConfig::new(arena), Dynamics::default(), DEFAULT_DT);
        let ctx = EpisodeContext::new(
            ObservationModel::default(),
            arbiter,
            ManoeuvreSpec::preset(ManoeuvreKind::Climb, &arena),
        );
        run_episode(&mut RandomPolicy::new(1, 4), &ctx, 2).unwrap()
    }

    #[test]
    fn archive_round_trip_is_exact() {
        let tr = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        store_trajectory(&tr, &path).unwrap();
        assert_eq!(load_trajectory(&path).unwrap(), tr);
    }

    #[test]
    fn truncated_archive_is_rejected() {
        let text = trajectory_to_text(&sample());
        let lines: Vec<&str> = text.lines().collect();
        let cut = lines[..lines.len() - 1].join("\n");
        assert!(parse_trajectory(&cut).is_err());
        let no_header = lines[1..].join("\n");
        assert!(parse_trajectory(&no_header).is_err());
    }

    #[test]
    fn plot_table_has_one_row_per_step() {
        let tr = sample();
        let table = plot_table(&tr);
        assert_eq!(table.lines().count(), tr.len() + 1);
        assert!(table.lines().skip(1).all(|l| l.split_whitespace().count() == 13));
    }
}

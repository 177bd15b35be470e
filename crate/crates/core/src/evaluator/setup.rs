use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run_episode, EpisodeContext, EvalError, MeanStd, MetricsReport, Policy, Trajectory};
use crate::learner::{MlpPolicy, PolicyModel};

/// The three evaluation setups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setup {
    /// Direct operator control on the composite manoeuvre.
    HumanCombined,
    /// Policy trained on composite-task demonstrations.
    DnnCombined,
    /// Policy bootstrapped from primitive sub-task demonstrations.
    Primitive,
}

impl Setup {
    pub const ALL: [Setup; 3] = [Setup::HumanCombined, Setup::DnnCombined, Setup::Primitive];

    pub fn name(self) -> &'static str {
        match self {
            Setup::HumanCombined => "human-combined",
            Setup::DnnCombined => "dnn-combined",
            Setup::Primitive => "primitive",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Setup::HumanCombined => "Human-combined",
            Setup::DnnCombined => "DNN-combined",
            Setup::Primitive => "Primitive (bootstrapped)",
        }
    }
}

impl std::fmt::Display for Setup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Setup::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown setup {s:?} (expected human-combined, dnn-combined or primitive)"))
    }
}

/// Where a setup's behaviour comes from.
pub enum SetupSource<'a> {
    /// Previously recorded operator sessions, replayed for their metrics.
    Sessions(&'a [Trajectory]),
    /// A trained model, run closed loop.
    Model(&'a PolicyModel),
    /// Any live policy (e.g. a scripted stand-in for the operator).
    Policy(&'a mut dyn Policy),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetupReport {
    pub setup: Setup,
    pub runs: Vec<MetricsReport>,
    /// Per-step mean centring distance, aggregated over runs.
    pub distance: MeanStd,
    /// Per-step mean squared centring distance, aggregated over runs.
    pub sq_distance: MeanStd,
    /// Per-step mean spread error, aggregated over runs.
    pub radius: MeanStd,
    pub delta_d: MeanStd,
    pub delta_nu: MeanStd,
    pub coverage: MeanStd,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

impl SetupReport {
    pub fn from_trajectories(setup: Setup, trajectories: Vec<Trajectory>) -> Self {
        let runs: Vec<MetricsReport> = trajectories.iter().map(MetricsReport::from_trajectory).collect();
        let agg = |f: fn(&MetricsReport) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            setup,
            distance: agg(|r| r.distance.mean),
            sq_distance: agg(|r| r.mean_sq_distance),
            radius: agg(|r| r.radius.mean),
            delta_d: agg(|r| r.delta_d),
            delta_nu: agg(|r| r.delta_nu),
            coverage: agg(|r| r.coverage),
            runs,
            trajectories,
        }
    }

    /// Machine-readable summary.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Run (or replay) `n_runs` composite-manoeuvre episodes for one setup.
///
/// Seeds are `base_seed, base_seed + 1, …`; recorded sessions are taken in
/// order.
pub fn run_setup(
    setup: Setup,
    source: SetupSource<'_>,
    ctx: &EpisodeContext,
    n_runs: usize,
    base_seed: u64,
) -> Result<SetupReport, EvalError> {
    let seeds = (0..n_runs as u64).map(|i| base_seed.wrapping_add(i));
    let trajectories = match source {
        SetupSource::Sessions(sessions) => {
            if sessions.is_empty() {
                return Err(EvalError::MissingArtifact(format!("no recorded sessions for {setup}")));
            }
            sessions.iter().take(n_runs).cloned().collect()
        }
        SetupSource::Model(model) => {
            let mut policy = MlpPolicy::new(model.clone()).map_err(|e| EvalError::MissingArtifact(e.to_string()))?;
            seeds.map(|s| run_episode(&mut policy, ctx, s)).collect::<Result<_, _>>()?
        }
        SetupSource::Policy(policy) => seeds.map(|s| run_episode(policy, ctx, s)).collect::<Result<_, _>>()?,
    };
    Ok(SetupReport::from_trajectories(setup, trajectories))
}

/// Plain-text table with one row per setup: centring and spread errors as
/// mean ± std of per-step means, plus coverage.
pub fn report_table(reports: &[SetupReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:>4} {:>24} {:>24} {:>24} {:>18}",
        "setup", "runs", "distance (image)", "distance² (image²)", "radius err² (image²)", "coverage"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<20} {:>4} {:>24} {:>24} {:>24} {:>18}",
            r.setup.label(),
            r.runs.len(),
            r.distance.to_string(),
            r.sq_distance.to_string(),
            r.radius.to_string(),
            r.coverage.to_string(),
        );
    }
    out
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EvalError, StepRecord, Trajectory};
use crate::dataset::{DemoHeader, DemoSet, Provenance, Recorder, SubTaskSpec};
use crate::safety::{Arbiter, OverrideSlot};
use crate::sim::{
    Action, ManoeuvreSpec, Observation, ObservationModel, UavPose, WorldState, FORMATION_BASE_RADIUS,
};

/// Anything that maps an observation to a raw 4-D command.
pub trait Policy {
    /// Raw command; values outside `[-1, 1]` are clamped, non-finite values
    /// abort the episode.
    fn act(&mut self, obs: &Observation) -> [f64; 4];

    fn id(&self) -> String;
}

impl Policy for crate::dataset::ScriptedExpert {
    fn act(&mut self, obs: &Observation) -> [f64; 4] {
        crate::dataset::ScriptedExpert::act(self, obs).as_array()
    }

    fn id(&self) -> String {
        format!("scripted-{}", self.task().manoeuvre)
    }
}

pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, _obs: &Observation) -> [f64; 4] {
        [0.0; 4]
    }

    fn id(&self) -> String {
        "zero".into()
    }
}

/// Uniformly random commands, optionally held for several steps.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    hold: usize,
    left: usize,
    current: [f64; 4],
}

impl RandomPolicy {
    pub fn new(seed: u64, hold: usize) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), hold: hold.max(1), left: 0, current: [0.0; 4] }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _obs: &Observation) -> [f64; 4] {
        if self.left == 0 {
            self.current = std::array::from_fn(|_| self.rng.random_range(-1.0..=1.0));
            self.left = self.hold;
        }
        self.left -= 1;
        self.current
    }

    fn id(&self) -> String {
        "random".into()
    }
}

/// Fixed parts of an episode: observation model, safety arbiter and the base
/// manoeuvre that seeded cases are derived from.
#[derive(Clone, Debug)]
pub struct EpisodeContext {
    pub observation: ObservationModel,
    pub arbiter: Arbiter,
    pub manoeuvre: ManoeuvreSpec,
    /// Randomize formation orientation, track mirroring and UAV start per seed.
    pub randomize: bool,
    pub overrides: Option<OverrideSlot>,
}

impl EpisodeContext {
    pub fn new(observation: ObservationModel, arbiter: Arbiter, manoeuvre: ManoeuvreSpec) -> Self {
        Self { observation, arbiter, manoeuvre, randomize: true, overrides: None }
    }

    /// Manoeuvre and initial world for `seed`.
    pub fn case(&self, seed: u64) -> (ManoeuvreSpec, WorldState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = if self.randomize {
            let orientation = rng.random_range(0.0..std::f64::consts::TAU);
            let pivot = self.arbiter.safety.bounds.center();
            self.manoeuvre.randomized_case(orientation, pivot, rng.random(), rng.random())
        } else {
            self.manoeuvre.clone()
        };
        let center = spec.center_at(0.0);
        let framing = self.observation.framing_altitude(FORMATION_BASE_RADIUS * spec.scale_at(0.0));
        let (dx, dy, dz) = if self.randomize {
            (rng.random_range(-0.1..=0.1), rng.random_range(-0.1..=0.1), rng.random_range(0.95..=1.05))
        } else {
            (0.0, 0.0, 1.0)
        };
        let uav = UavPose { x: center.x + dx, y: center.y + dy, z: framing * dz, heading: 0.0 };
        let world = WorldState::initial(uav, &spec);
        (spec, world)
    }
}

/// Record `episodes` closed-loop episodes of `policy` as demonstrations of
/// `task`, with seeds `base_seed, base_seed + 1, …`.
pub fn record_demonstrations(
    policy: &mut dyn Policy,
    ctx: &EpisodeContext,
    task: &SubTaskSpec,
    provenance: Provenance,
    episodes: u32,
    base_seed: u64,
) -> Result<DemoSet, EvalError> {
    let mut rec = Recorder::new(DemoHeader::new(ctx.arbiter.dt, task.clone(), provenance));
    for e in 0..episodes {
        let tr = run_episode(policy, ctx, base_seed.wrapping_add(e as u64))?;
        if let Some(reason) = &tr.aborted {
            return Err(EvalError::Aborted(reason.clone()));
        }
        rec.push_trajectory(&tr, task.id)?;
    }
    Ok(rec.finish()?)
}

/// Run one closed-loop episode:
/// observe → policy → arbitrate → step, for the manoeuvre's duration.
pub fn run_episode(policy: &mut dyn Policy, ctx: &EpisodeContext, seed: u64) -> Result<Trajectory, EvalError> {
    let (spec, mut world) = ctx.case(seed);
    let dt = ctx.arbiter.dt;
    let steps = spec.steps(dt);
    let mut records = Vec::with_capacity(steps);
    let mut prev: Option<Observation> = None;
    let mut aborted = None;
    for _ in 0..steps {
        let obs = ctx.observation.observe(&world, prev.as_ref())?;
        let raw = policy.act(&obs);
        if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
            aborted = Some(format!("policy emitted non-finite action component {i} at t={:.3}", world.t));
            break;
        }
        let proposed = Action::from_array(raw);
        let latest = ctx.overrides.as_ref().and_then(OverrideSlot::latest);
        let arbitration = ctx.arbiter.arbitrate(proposed, &world, &spec, latest.as_ref())?;
        let (next, ugv_stopped) = ctx.arbiter.advance(&world, &arbitration, &spec)?;
        records.push(StepRecord { t: world.t, world, observation: obs, proposed, arbitration, ugv_stopped });
        world = next;
        prev = Some(obs);
    }
    Ok(Trajectory {
        policy_id: policy.id(),
        manoeuvre: spec.kind(),
        dt,
        seed,
        spec,
        records,
        aborted,
    })
}

use absdl_core::dataset::{self, fuse, DemoSet, Dim, ExpertGains, Provenance, ScriptedExpert, SubTaskSpec};
use absdl_core::evaluator::{record_demonstrations, run_episode, EpisodeContext, Policy, RandomPolicy};
use absdl_core::learner::{load_model, store_model, train, MlpPolicy, TrainConfig};
use absdl_core::safety::{Arbiter, SafetyConfig};
use absdl_core::sim::{step_world, Arena, Dynamics, ManoeuvreKind, ManoeuvreSpec, ObservationModel, Observation, Preset, DEFAULT_DT};

fn ctx(kind: ManoeuvreKind) -> EpisodeContext {
    let arena = Arena::preset(Preset::Sim);
    let arbiter = Arbiter::new(SafetyConfig::new(arena), Dynamics::default(), DEFAULT_DT);
    EpisodeContext::new(ObservationModel::default(), arbiter, ManoeuvreSpec::preset(kind, &arena))
}

fn demos(kind: ManoeuvreKind, episodes: u32, seed: u64) -> DemoSet {
    let task = SubTaskSpec::preset(kind, false);
    let mut expert = ScriptedExpert::new(task.clone(), ExpertGains::default());
    record_demonstrations(&mut expert, &ctx(kind), &task, Provenance::Scripted, episodes, seed).unwrap()
}

#[test]
fn full_sized_primitive_sets_fuse_without_loss() {
    let sets = [
        demos(ManoeuvreKind::FixedAltitude, 5, 0),
        demos(ManoeuvreKind::Climb, 10, 1000),
        demos(ManoeuvreKind::Descend, 10, 2000),
    ];
    let sizes: Vec<usize> = sets.iter().map(DemoSet::len).collect();
    assert_eq!(sizes, [5300, 4690, 4900]);
    let fused = fuse(&sets).unwrap();
    assert_eq!(fused.len(), 14_890);
    // Concatenated in input order, each block keeping its sub-task tag.
    let mut offset = 0;
    for (set, tag) in sets.iter().zip([1, 2, 3]) {
        let block = &fused.samples[offset..offset + set.len()];
        assert!(block.iter().all(|s| s.tag == tag));
        assert!(block.iter().zip(&set.samples).all(|(f, s)| f.state == s.state));
        offset += set.len();
    }
    // The fixed-altitude block never commands the vertical channel.
    assert!(fused.samples[..5300].iter().all(|s| s.action[Dim::Vertical.index()] == 0.0));
    // Serialized and parsed back unchanged.
    assert_eq!(dataset::parse(&dataset::to_text(&fused)).unwrap(), fused);
}

#[test]
fn shorter_training_is_a_prefix_of_longer_training() {
    let mut data = demos(ManoeuvreKind::Climb, 1, 3);
    data.samples.truncate(200);
    let cfg = TrainConfig { hidden: vec![32, 32], epochs: 60, ..TrainConfig::default() };
    let long = train(&data, &cfg).unwrap();
    let short = train(&data, &TrainConfig { epochs: 20, ..cfg }).unwrap();
    assert_eq!(short.history.train[..], long.history.train[..20]);
    assert!(long.history.final_train().unwrap() < long.history.train[0]);
}

#[test]
fn stored_model_drives_the_same_episode() {
    let data = demos(ManoeuvreKind::Descend, 1, 9);
    let out = train(&data, &TrainConfig { hidden: vec![16], epochs: 30, ..TrainConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    store_model(&out.model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let c = ctx(ManoeuvreKind::Combined);
    let a = run_episode(&mut MlpPolicy::new(out.model).unwrap(), &c, 4).unwrap();
    let b = run_episode(&mut MlpPolicy::new(loaded).unwrap(), &c, 4).unwrap();
    assert_eq!(a, b);
}

/// Feeds back a fixed list of commands.
struct Scripted(std::vec::IntoIter<[f64; 4]>);

impl Policy for Scripted {
    fn act(&mut self, _obs: &Observation) -> [f64; 4] {
        self.0.next().unwrap_or([0.0; 4])
    }

    fn id(&self) -> String {
        "scripted-replay".into()
    }
}

#[test]
fn replaying_logged_actions_reproduces_the_trajectory() {
    let c = ctx(ManoeuvreKind::Combined);
    let original = run_episode(&mut RandomPolicy::new(17, 8), &c, 5).unwrap();
    let actions: Vec<[f64; 4]> = original.records.iter().map(|r| r.proposed.as_array()).collect();
    let replay = run_episode(&mut Scripted(actions.into_iter()), &c, 5).unwrap();
    assert_eq!(replay.records, original.records);
    // Step by step, unarbitrated steps match step_world on the logged state.
    for pair in original.records.windows(2) {
        if pair[0].arbitration.eta == 0 && pair[1].ugv_stopped == [false; 3] {
            let next = step_world(&pair[0].world, &pair[0].arbitration.effective, DEFAULT_DT, &original.spec, &Dynamics::default()).unwrap();
            assert_eq!(next.bit_hash(), pair[1].world.bit_hash());
        }
    }
}

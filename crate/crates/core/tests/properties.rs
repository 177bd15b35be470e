use absdl_core::learner::{Activation, Mlp};
use absdl_core::safety::{check_unsafe, Arbiter, Obstacle, OverrideCommand, SafetyConfig, Verdict};
use absdl_core::sim::{
    formation_positions, step_world, Action, Arena, Dynamics, ManoeuvreKind, ManoeuvreSpec, Point2, Preset, UavPose,
    WorldState, DEFAULT_DT,
};
use ndarray::Array2;
use proptest::prelude::*;

fn arena() -> Arena {
    Arena::preset(Preset::Sim)
}

fn layout() -> impl Strategy<Value = Vec<Obstacle>> {
    prop::collection::vec((-5.0..4.0f64, -5.0..4.0f64, 0.1..1.5f64, 0.1..1.5f64), 0..5)
        .prop_map(|v| v.into_iter().map(|(x, y, w, h)| Obstacle::new(x, x + w, y, y + h).unwrap()).collect())
}

fn action() -> impl Strategy<Value = Action> {
    prop::array::uniform4(-1.0..=1.0f64).prop_map(Action::from_array)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn unsafe_stays_unsafe_under_wider_margins(
        obstacles in layout(), x in -6.0..6.0f64, y in -6.0..6.0f64, xi1 in 0.0..1.0f64, extra in 0.0..1.0f64,
    ) {
        let mut cfg = SafetyConfig::new(arena());
        cfg.obstacles = obstacles;
        cfg.margin = xi1;
        let p = Point2::new(x, y);
        if check_unsafe(p, &cfg) == 1 {
            cfg.margin = xi1 + extra;
            prop_assert_eq!(check_unsafe(p, &cfg), 1);
        }
    }

    #[test]
    fn zero_margin_is_containment_or_leaving_the_arena(obstacles in layout(), x in -6.0..6.0f64, y in -6.0..6.0f64) {
        let mut cfg = SafetyConfig::new(arena());
        cfg.obstacles = obstacles.clone();
        cfg.margin = 0.0;
        let inside_obstacle = obstacles.iter().any(|o| {
            let [x0, x1, y0, y1] = o.edges();
            x0 < x && x < x1 && y0 < y && y < y1
        });
        let a = arena();
        let outside = x < a.x_min || x > a.x_max || y < a.y_min || y > a.y_max;
        prop_assert_eq!(check_unsafe(Point2::new(x, y), &cfg), (inside_obstacle || outside) as u8);
    }

    #[test]
    fn a_passing_arbitration_is_idempotent(obstacles in layout(), a in action(), x in -4.0..4.0f64, y in -4.0..4.0f64) {
        let mut cfg = SafetyConfig::new(arena());
        cfg.obstacles = obstacles;
        let arbiter = Arbiter::new(cfg, Dynamics::default(), DEFAULT_DT);
        let spec = ManoeuvreSpec::preset(ManoeuvreKind::FixedAltitude, &arena());
        let world = WorldState::initial(UavPose { x, y, z: 1.5, heading: 0.3 }, &spec);
        let first = arbiter.arbitrate(a, &world, &spec, None).unwrap();
        if first.verdict == Verdict::Pass {
            let again = arbiter.arbitrate(first.effective, &world, &spec, None).unwrap();
            prop_assert_eq!(again.effective, first.effective);
            prop_assert_eq!(again.verdict, Verdict::Pass);
        }
    }

    #[test]
    fn manual_commands_cannot_cross_a_margin(a in action(), x in -4.9..4.9f64) {
        let arbiter = Arbiter::new(SafetyConfig::new(arena()), Dynamics::default(), DEFAULT_DT);
        let spec = ManoeuvreSpec::preset(ManoeuvreKind::FixedAltitude, &arena());
        let world = WorldState::initial(UavPose { x, y: 0.0, z: 1.5, heading: 0.0 }, &spec);
        let cmd = OverrideCommand::manual(a, "test", 0.0);
        let arb = arbiter.arbitrate(Action::ZERO, &world, &spec, Some(&cmd)).unwrap();
        let (next, _) = arbiter.advance(&world, &arb, &spec).unwrap();
        if arb.verdict == Verdict::Manual {
            prop_assert_eq!(check_unsafe(next.uav.ground(), &arbiter.safety), 0);
        } else {
            prop_assert_eq!(arb.verdict, Verdict::Hover);
        }
    }

    #[test]
    fn velocities_never_exceed_their_limits(actions in prop::collection::vec(action(), 1..80), dt in 0.01..2.0f64) {
        let spec = ManoeuvreSpec::preset(ManoeuvreKind::Combined, &arena());
        let dynamics = Dynamics::default();
        let mut w = WorldState::initial(UavPose { x: 0.0, y: 0.0, z: 1.5, heading: 0.0 }, &spec);
        let limits = dynamics.v_max.as_array();
        for a in &actions {
            w = step_world(&w, a, dt, &spec, &dynamics).unwrap();
            for (v, lim) in w.uav_vel.as_array().iter().zip(limits) {
                prop_assert!(v.abs() <= lim + 1e-9);
            }
        }
    }

    #[test]
    fn network_outputs_stay_inside_the_action_box(seed in 0u64..1000, scale in 0.0001..3.0f64, x in prop::array::uniform11(-50.0..50.0f32)) {
        let net: Mlp<f32> = Mlp::new(&[11, 20, 20, 4], Activation::Relu, Activation::Tanh, scale, seed).unwrap();
        let input = Array2::from_shape_vec((1, 11), x.to_vec()).unwrap();
        prop_assert!(net.forward(input.view()).iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn combined_formation_is_continuous_across_segments() {
    for preset in [Preset::Sim, Preset::Lab] {
        let spec = ManoeuvreSpec::preset(ManoeuvreKind::Combined, &Arena::preset(preset));
        for &t in spec.boundaries() {
            let before = formation_positions(&spec, t - 1e-12);
            let after = formation_positions(&spec, t + 1e-12);
            for (a, b) in before.iter().zip(&after) {
                assert!(a.distance(*b) < 1e-9, "jump at t = {t}");
            }
        }
    }
}

use std::collections::VecDeque;

use proptest::prelude::*;
use stagenav_core::memory::{MemoryState, RolloutBuffer};
use stagenav_core::sim::{
    normalize_heading, render_view, step, wrap_signed, Action, Observation, Pose, SceneMap, SimConfig,
};

fn observation(heading: f64) -> Observation {
    let rows: Vec<String> = (0..4).map(|_| ".".repeat(4)).collect();
    let scene = SceneMap::from_rows("p", 0.5, &rows, vec![]).unwrap();
    render_view(&scene, &Pose::new(1.0, 1.0, heading), 0.0, &SimConfig::default())
}

#[derive(Debug, Clone)]
enum Op {
    Push(u32),
    Reset,
    Baseline(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (0u32..1000).prop_map(Op::Push),
        1 => Just(Op::Reset),
        1 => (1usize..6).prop_map(Op::Baseline),
    ]
}

proptest! {
    #[test]
    fn sttb_keeps_the_newest_entries_in_order(capacity in 1usize..7, ops in prop::collection::vec(op(), 0..60)) {
        let mut memory = MemoryState::new(capacity, observation(0.0), 0);
        let mut model: VecDeque<u32> = VecDeque::new();
        let mut baseline = 1;
        for op in ops {
            match op {
                Op::Push(s) => {
                    memory.sttb_update(s, observation(s as f64), vec![Action::Forward]);
                    model.push_back(s);
                    if model.len() > capacity {
                        model.pop_front();
                    }
                }
                Op::Reset => {
                    memory.sttb_reset();
                    model.clear();
                }
                Op::Baseline(k) => {
                    memory.vb_update(observation(90.0), k, 0);
                    baseline = k;
                }
            }
            prop_assert!(memory.sttb_len() <= capacity);
            let steps: Vec<u32> = memory.sttb().map(|e| e.step).collect();
            prop_assert_eq!(steps, model.iter().copied().collect::<Vec<_>>());
            // STTB churn never touches the baseline
            prop_assert_eq!(memory.vb().subgoal_index, baseline);
        }
    }

    #[test]
    fn rollout_buffer_rejects_overflow_and_disorder(horizon in 1usize..10, steps in prop::collection::vec(0u32..50, 0..20)) {
        let mut buffer = RolloutBuffer::new(horizon);
        let mut accepted: Vec<u32> = Vec::new();
        for s in steps {
            let ok = accepted.len() < horizon && accepted.last().is_none_or(|&l| s > l);
            prop_assert_eq!(buffer.append(s, observation(0.0), Action::Forward).is_ok(), ok);
            if ok {
                accepted.push(s);
            }
        }
        prop_assert_eq!(buffer.entries().iter().map(|e| e.step).collect::<Vec<_>>(), accepted);
    }

    #[test]
    fn heading_normalization(deg in -1.0e6f64..1.0e6) {
        let h = normalize_heading(deg);
        prop_assert!((0.0..360.0).contains(&h));
        prop_assert_eq!(normalize_heading(h), h);
        let turns = (deg - h) / 360.0;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
        let s = wrap_signed(deg);
        prop_assert!(s > -180.0 && s <= 180.0);
        prop_assert!((normalize_heading(s) - h).abs() < 1e-9);
    }

    #[test]
    fn twelve_turns_return_to_the_start(heading in 0.0f64..360.0, left in any::<bool>()) {
        let rows: Vec<String> = (0..3).map(|_| ".".repeat(3)).collect();
        let scene = SceneMap::from_rows("p", 0.5, &rows, vec![]).unwrap();
        let config = SimConfig::default();
        let start = Pose::new(0.75, 0.75, heading);
        let action = if left { Action::TurnLeft } else { Action::TurnRight };
        let mut pose = start;
        for _ in 0..12 {
            pose = step(&scene, pose, action, &config).unwrap().pose;
        }
        let diff = wrap_signed(pose.heading - start.heading).abs();
        prop_assert!(diff < 1e-6, "{} vs {}", pose.heading, start.heading);
        prop_assert_eq!((pose.x, pose.y), (start.x, start.y));
    }

    #[test]
    fn walking_never_enters_a_blocked_cell(
        seed_rows in prop::collection::vec("[.#]{8}", 8),
        actions in prop::collection::vec(prop::sample::select(Action::ALL.to_vec()), 1..80),
    ) {
        let mut rows = seed_rows;
        rows[4].replace_range(4..5, ".");
        let scene = SceneMap::from_rows("p", 0.5, &rows, vec![]).unwrap();
        let config = SimConfig::default();
        let mut pose = Pose::new(2.25, 2.25, 0.0);
        for a in actions {
            let r = step(&scene, pose, a, &config).unwrap();
            prop_assert!(scene.is_free_point(r.pose.position()));
            if r.collided {
                prop_assert_eq!(r.pose, pose);
            }
            pose = r.pose;
        }
    }
}

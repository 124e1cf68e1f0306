//! Synthetic corridor-and-rooms suites and their validator.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Oracle, OracleKnowledge};
use crate::controller::{run_episode, ControllerConfig, DoneReason};
use crate::metrics::compute_ne;
use crate::sim::{Cell, Episode, GroundTruthSubgoal, Landmark, Point, Pose, SceneMap, EPISODE_SCHEMA};

const OBJECTS: [&str; 24] = [
    "sofa", "armchair", "bookshelf", "fireplace", "piano", "dining table", "sink", "refrigerator",
    "bathtub", "bed", "wardrobe", "desk", "television", "potted plant", "washing machine",
    "staircase", "mirror", "floor lamp", "rug", "painting", "clock", "vase", "bench", "coat rack",
];
const COLOURS: [&str; 8] = ["red", "blue", "green", "wooden", "white", "black", "grey", "yellow"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSpec {
    pub episodes: usize,
    pub subgoals_min: usize,
    pub subgoals_max: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub rooms: usize,
    pub landmarks_per_room: usize,
    pub episodes_per_scene: usize,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            episodes: 50,
            subgoals_min: 1,
            subgoals_max: 4,
            seed: 7,
            width: 40,
            height: 30,
            cell_size: 0.5,
            rooms: 6,
            landmarks_per_room: 3,
            episodes_per_scene: 10,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SuiteError {
    #[error("invalid suite spec: {0}")]
    Spec(String),
    #[error("could not place an episode with {subgoals} subgoals in scene {scene} after {attempts} attempts")]
    CannotPlace {
        scene: String,
        subgoals: usize,
        attempts: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub scenes: Vec<SceneMap>,
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Clone, Copy)]
struct Room {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

impl Room {
    fn center(&self) -> (usize, usize) {
        (self.x0 + self.w / 2, self.y0 + self.h / 2)
    }

    fn overlaps(&self, o: &Room, margin: usize) -> bool {
        self.x0 < o.x0 + o.w + margin
            && o.x0 < self.x0 + self.w + margin
            && self.y0 < o.y0 + o.h + margin
            && o.y0 < self.y0 + self.h + margin
    }

    fn contains(&self, c: Cell) -> bool {
        (self.x0..self.x0 + self.w).contains(&c.col) && (self.y0..self.y0 + self.h).contains(&c.row)
    }
}

struct Layout {
    scene: SceneMap,
    rooms: Vec<Room>,
    /// Room index per landmark; `None` for corridor landmarks.
    landmark_room: Vec<Option<usize>>,
}

impl SuiteSpec {
    fn validate(&self) -> Result<(), SuiteError> {
        let bad = |m: &str| Err(SuiteError::Spec(m.to_string()));
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if self.subgoals_min == 0 || self.subgoals_min > self.subgoals_max {
            return bad("subgoal range must satisfy 1 <= min <= max");
        }
        if self.width < 16 || self.height < 16 {
            return bad("grid must be at least 16x16 cells");
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return bad("cell_size must be positive");
        }
        if self.rooms < 2 {
            return bad("at least two rooms are needed");
        }
        if self.episodes_per_scene == 0 {
            return bad("episodes_per_scene must be at least 1");
        }
        if self.landmarks_per_room == 0 || self.rooms * self.landmarks_per_room + 2 * self.rooms > OBJECTS.len() * COLOURS.len() {
            return bad("landmark count out of range");
        }
        Ok(())
    }

    /// Minimum route length for an episode with `k` subgoals, in meters.
    fn min_route(&self, k: usize) -> f64 {
        6.0 + 2.0 * k as f64
    }
}

fn carve(grid: &mut [Vec<u8>], col: usize, row: usize) {
    if row + 1 < grid.len() && col + 1 < grid[0].len() && row > 0 && col > 0 {
        grid[row][col] = b'.';
    }
}

fn build_layout(spec: &SuiteSpec, id: &str, rng: &mut ChaCha8Rng) -> Result<Layout, SuiteError> {
    for _ in 0..50 {
        let mut grid = vec![vec![b'#'; spec.width]; spec.height];
        let mut rooms: Vec<Room> = Vec::new();
        for _ in 0..400 {
            if rooms.len() == spec.rooms {
                break;
            }
            let w = rng.random_range(5..=9);
            let h = rng.random_range(5..=8);
            let room = Room {
                x0: rng.random_range(1..=spec.width - w - 1),
                y0: rng.random_range(1..=spec.height - h - 1),
                w,
                h,
            };
            if rooms.iter().all(|r| !r.overlaps(&room, 2)) {
                rooms.push(room);
            }
        }
        if rooms.len() < spec.rooms {
            continue;
        }
        for r in &rooms {
            for row in r.y0..r.y0 + r.h {
                for col in r.x0..r.x0 + r.w {
                    carve(&mut grid, col, row);
                }
            }
        }
        rooms.sort_by_key(|r| (r.center().0, r.center().1));
        let mut corners = Vec::new();
        for i in 1..rooms.len() {
            let (ax, ay) = rooms[i].center();
            let j = (0..i)
                .min_by_key(|&j| {
                    let (bx, by) = rooms[j].center();
                    ax.abs_diff(bx).pow(2) + ay.abs_diff(by).pow(2)
                })
                .expect("i >= 1");
            let (bx, by) = rooms[j].center();
            let horizontal_first = rng.random_bool(0.5);
            let corner = if horizontal_first { (bx, ay) } else { (ax, by) };
            // two-cell-wide legs
            for col in ax.min(corner.0)..=ax.max(corner.0) + 1 {
                for row in ay.min(corner.1)..=ay.max(corner.1) + 1 {
                    carve(&mut grid, col, row);
                }
            }
            for col in bx.min(corner.0)..=bx.max(corner.0) + 1 {
                for row in by.min(corner.1)..=by.max(corner.1) + 1 {
                    carve(&mut grid, col, row);
                }
            }
            if !rooms.iter().any(|r| r.contains(Cell::new(corner.0, corner.1))) {
                corners.push(Cell::new(corner.0, corner.1));
            }
        }

        let mut labels: Vec<String> = COLOURS
            .iter()
            .flat_map(|c| OBJECTS.iter().map(move |o| format!("{c} {o}")))
            .collect();
        labels.shuffle(rng);
        let mut landmarks = Vec::new();
        let mut landmark_room = Vec::new();
        for (ri, r) in rooms.iter().enumerate() {
            let mut cells: Vec<Cell> = (r.y0..r.y0 + r.h)
                .flat_map(|row| (r.x0..r.x0 + r.w).map(move |col| Cell::new(col, row)))
                .collect();
            cells.shuffle(rng);
            for cell in cells.into_iter().take(spec.landmarks_per_room) {
                landmarks.push(Landmark {
                    label: labels.pop().expect("label pool sized by validate"),
                    cell,
                    salience: 1,
                });
                landmark_room.push(Some(ri));
            }
        }
        for cell in corners {
            if landmarks.iter().all(|l| l.cell != cell) {
                landmarks.push(Landmark {
                    label: labels.pop().expect("label pool sized by validate"),
                    cell,
                    salience: 2,
                });
                landmark_room.push(None);
            }
        }
        let rows: Vec<String> = grid
            .into_iter()
            .map(|r| String::from_utf8(r).expect("ascii grid"))
            .collect();
        let scene = SceneMap::from_rows(id, spec.cell_size, &rows, landmarks)
            .map_err(|e| SuiteError::Spec(e.to_string()))?;
        return Ok(Layout {
            scene,
            rooms,
            landmark_room,
        });
    }
    Err(SuiteError::Spec(format!(
        "cannot fit {} rooms into a {}x{} grid",
        spec.rooms, spec.width, spec.height
    )))
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn oracle_completes(scene: &Arc<SceneMap>, episode: &Episode, config: &ControllerConfig) -> bool {
    let oracle = Oracle::new(OracleKnowledge::from_episode(
        scene.clone(),
        episode,
        config.success_threshold,
        config.sim,
    ));
    match run_episode(episode, scene, &oracle, config) {
        Ok(run) => {
            run.state.done_reason == Some(DoneReason::Completed)
                && compute_ne(scene, run.state.pose.position(), episode.goal)
                    .is_ok_and(|ne| ne <= config.success_threshold)
        }
        Err(_) => false,
    }
}

fn try_episode(
    spec: &SuiteSpec,
    layout: &Layout,
    scene: &Arc<SceneMap>,
    k: usize,
    id: String,
    rng: &mut ChaCha8Rng,
    config: &ControllerConfig,
) -> Option<Episode> {
    let room = layout.rooms[rng.random_range(0..layout.rooms.len())];
    let start_cell = Cell::new(
        rng.random_range(room.x0..room.x0 + room.w),
        rng.random_range(room.y0..room.y0 + room.h),
    );
    let landmarks = scene.landmarks();
    let goal_candidates: Vec<usize> = (0..landmarks.len())
        .filter(|&i| layout.landmark_room[i].is_some_and(|r| !layout.rooms[r].contains(start_cell)))
        .collect();
    let goal_idx = *goal_candidates.get(rng.random_range(0..goal_candidates.len().max(1)))?;
    let goal_cell = landmarks[goal_idx].cell;
    let path = scene.shortest_cell_path(start_cell, goal_cell)?;
    let field = scene.distance_field(goal_cell);
    if field.meters(start_cell)? < spec.min_route(k) {
        return None;
    }

    let cs = scene.cell_size();
    let edge = (3.0 / cs).ceil() as usize;
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for (li, lm) in landmarks.iter().enumerate() {
        if li == goal_idx {
            continue;
        }
        let centre = scene.cell_center(lm.cell);
        let (pi, d) = path
            .iter()
            .enumerate()
            .map(|(i, c)| (i, scene.cell_center(*c).distance(&centre)))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if d <= 2.0 && pi >= edge && pi + edge < path.len() {
            candidates.push((li, pi));
        }
    }
    candidates.shuffle(rng);
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    for (li, pi) in candidates {
        if chosen.len() + 1 == k {
            break;
        }
        if chosen.iter().all(|&(_, q)| pi.abs_diff(q) >= edge) {
            chosen.push((li, pi));
        }
    }
    if chosen.len() + 1 < k {
        return None;
    }
    chosen.sort_by_key(|&(_, pi)| pi);

    let mut subgoals: Vec<GroundTruthSubgoal> = chosen
        .iter()
        .map(|&(li, pi)| GroundTruthSubgoal {
            text: format!("walk past the {}", landmarks[li].label),
            waypoint: scene.cell_center(path[pi]),
        })
        .collect();
    let goal = scene.cell_center(goal_cell);
    subgoals.push(GroundTruthSubgoal {
        text: format!("stop at the {}", landmarks[goal_idx].label),
        waypoint: goal,
    });
    let instruction = capitalize(
        &subgoals
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(", then "),
    ) + ".";
    let start = scene.cell_center(start_cell);
    let episode = Episode {
        schema: EPISODE_SCHEMA.to_string(),
        id,
        scene_id: scene.id().to_string(),
        instruction,
        start: Pose::new(start.x, start.y, 30.0 * rng.random_range(0..12) as f64),
        goal,
        reference_path: path.iter().map(|c| scene.cell_center(*c)).collect(),
        ground_truth_subgoals: Some(subgoals),
    };
    oracle_completes(scene, &episode, config).then_some(episode)
}

const ATTEMPTS_PER_EPISODE: usize = 400;

/// Deterministic under `spec.seed`. Every episode is checked by running the
/// clean oracle under `config` and kept only if it succeeds.
pub fn generate_suite(spec: &SuiteSpec, config: &ControllerConfig) -> Result<Suite, SuiteError> {
    spec.validate()?;
    config
        .validate()
        .map_err(|e| SuiteError::Spec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut scenes = Vec::new();
    let mut episodes = Vec::new();
    let scene_count = spec.episodes.div_ceil(spec.episodes_per_scene);
    for s in 0..scene_count {
        let layout = build_layout(spec, &format!("scene-{s:03}"), &mut rng)?;
        let scene = Arc::new(layout.scene.clone());
        let quota = (spec.episodes - episodes.len()).min(spec.episodes_per_scene);
        for _ in 0..quota {
            let k = rng.random_range(spec.subgoals_min..=spec.subgoals_max);
            let id = format!("ep-{:03}", episodes.len());
            let episode = (0..ATTEMPTS_PER_EPISODE)
                .find_map(|_| try_episode(spec, &layout, &scene, k, id.clone(), &mut rng, config))
                .ok_or_else(|| SuiteError::CannotPlace {
                    scene: scene.id().to_string(),
                    subgoals: k,
                    attempts: ATTEMPTS_PER_EPISODE,
                })?;
            episodes.push(episode);
        }
        scenes.push(layout.scene);
    }
    Ok(Suite { scenes, episodes })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub location: String,
    pub message: String,
}

/// Plain 4-connected breadth-first reachability. Without corner cutting,
/// 8-connected reachability is the same relation.
fn reachable(scene: &SceneMap, from: Cell, to: Cell) -> bool {
    let mut seen = vec![false; scene.width() * scene.height()];
    let mut queue = VecDeque::from([from]);
    seen[scene.index(from)] = true;
    while let Some(c) = queue.pop_front() {
        if c == to {
            return true;
        }
        for (dc, dr) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let (col, row) = (c.col as i64 + dc, c.row as i64 + dr);
            if col < 0 || row < 0 {
                continue;
            }
            let n = Cell::new(col as usize, row as usize);
            if scene.is_free(n) && !seen[scene.index(n)] {
                seen[scene.index(n)] = true;
                queue.push_back(n);
            }
        }
    }
    false
}

/// Checks that need no episode rollout: unique ids, structural invariants,
/// known scene, and start, goal, path and waypoints on free cells.
pub fn input_diagnostics(
    scenes: &BTreeMap<String, Arc<SceneMap>>,
    episodes: &[Episode],
    success_threshold: f64,
) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut ids = std::collections::BTreeSet::new();
    for (i, ep) in episodes.iter().enumerate() {
        let loc = format!("episodes[{i}] ({})", ep.id);
        let mut push = |message: String| {
            out.push(Diagnostic {
                location: loc.clone(),
                message,
            })
        };
        if !ids.insert(ep.id.clone()) {
            push("duplicate episode id".into());
        }
        for v in ep.structural_violations(success_threshold) {
            push(v);
        }
        let Some(scene) = scenes.get(&ep.scene_id) else {
            push(format!("unknown scene_id {:?}", ep.scene_id));
            continue;
        };
        let free = |p: Point| scene.cell_of(p).is_some_and(|c| scene.is_free(c));
        if !free(ep.start.position()) {
            push("start is not on a free cell".into());
        }
        if !free(ep.goal) {
            push("goal is not on a free cell".into());
        }
        for (j, p) in ep.reference_path.iter().enumerate() {
            if !free(*p) {
                push(format!("reference_path[{j}] is not on a free cell"));
            }
        }
        if let Some(subgoals) = &ep.ground_truth_subgoals {
            for (j, g) in subgoals.iter().enumerate() {
                if !free(g.waypoint) {
                    push(format!("ground_truth_subgoals[{j}].waypoint is not on a free cell"));
                }
            }
            let mut texts = std::collections::BTreeSet::new();
            if subgoals.iter().any(|g| !texts.insert(g.text.as_str())) {
                push("ground_truth_subgoals repeat a subgoal text".into());
            }
        }
    }
    out
}

/// [`input_diagnostics`] plus reachability and oracle completability for
/// every episode that is otherwise clean.
pub fn validate_suite(
    scenes: &BTreeMap<String, Arc<SceneMap>>,
    episodes: &[Episode],
    config: &ControllerConfig,
) -> Vec<Diagnostic> {
    let mut out = input_diagnostics(scenes, episodes, config.success_threshold);
    for (i, ep) in episodes.iter().enumerate() {
        let loc = format!("episodes[{i}] ({})", ep.id);
        if out.iter().any(|d| d.location == loc) {
            continue;
        }
        let scene = &scenes[&ep.scene_id];
        let cell = |p: Point| scene.cell_of(p).expect("checked by input_diagnostics");
        let message = if !reachable(scene, cell(ep.start.position()), cell(ep.goal)) {
            "oracle-completability: goal is unreachable from start"
        } else if !oracle_completes(scene, ep, config) {
            "oracle-completability: the oracle does not complete this episode"
        } else {
            continue;
        };
        out.push(Diagnostic {
            location: loc,
            message: message.into(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, min: usize, max: usize) -> SuiteSpec {
        SuiteSpec {
            episodes: 4,
            subgoals_min: min,
            subgoals_max: max,
            seed,
            ..SuiteSpec::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = ControllerConfig::default();
        let a = generate_suite(&small(3, 1, 2), &cfg).unwrap();
        let b = generate_suite(&small(3, 1, 2), &cfg).unwrap();
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.scenes[0].rows(), b.scenes[0].rows());
    }

    #[test]
    fn subgoal_range_is_respected() {
        let suite = generate_suite(&small(5, 1, 1), &ControllerConfig::default()).unwrap();
        for e in &suite.episodes {
            assert_eq!(e.ground_truth_subgoals.as_ref().unwrap().len(), 1);
        }
    }

    #[test]
    fn generated_suite_validates_clean() {
        let cfg = ControllerConfig::default();
        let suite = generate_suite(&small(11, 1, 3), &cfg).unwrap();
        let scenes = suite
            .scenes
            .iter()
            .map(|s| (s.id().to_string(), Arc::new(s.clone())))
            .collect();
        assert!(validate_suite(&scenes, &suite.episodes, &cfg).is_empty());
    }

    #[test]
    fn walled_off_goal_is_flagged() {
        let rows = ["#######", "#..#..#", "#######"];
        let scene = Arc::new(SceneMap::from_rows("s", 1.0, &rows, vec![]).unwrap());
        let ep = Episode {
            schema: EPISODE_SCHEMA.into(),
            id: "e".into(),
            scene_id: "s".into(),
            instruction: "go".into(),
            start: Pose::new(1.5, 1.5, 0.0),
            goal: Point::new(5.5, 1.5),
            reference_path: vec![Point::new(1.5, 1.5), Point::new(5.5, 1.5)],
            ground_truth_subgoals: None,
        };
        let scenes = BTreeMap::from([("s".to_string(), scene)]);
        let d = validate_suite(&scenes, &[ep], &ControllerConfig::default());
        assert_eq!(d.len(), 1, "{d:?}");
        assert!(d[0].message.contains("unreachable"));
    }

    #[test]
    fn rejects_bad_spec() {
        let cfg = ControllerConfig::default();
        assert!(generate_suite(&small(1, 3, 2), &cfg).is_err());
        assert!(generate_suite(&small(1, 0, 2), &cfg).is_err());
    }

    #[test]
    fn unplaceable_subgoal_count_is_an_error() {
        let spec = SuiteSpec {
            episodes: 1,
            subgoals_min: 40,
            subgoals_max: 40,
            ..SuiteSpec::default()
        };
        assert!(matches!(
            generate_suite(&spec, &ControllerConfig::default()),
            Err(SuiteError::CannotPlace { .. })
        ));
    }
}

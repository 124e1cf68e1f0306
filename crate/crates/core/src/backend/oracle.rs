use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AgentFeed, BackendError, BackendReply, ModelBackend, ModelRequest};
use crate::evidence::{Stage, TransitionDecision, ROLE_ROLLOUT_PREFIX, ROLE_VB};
use crate::sim::{
    bearing_between, normalize_heading, step, wrap_signed, Action, Cell, DistanceField, Episode,
    GroundTruthSubgoal, Point, Pose, SceneMap, SimConfig,
};

/// Path cells considered when picking a straight-line target.
const LOOKAHEAD: usize = 6;
/// Shortest leg of the sweep an ungrounded agent performs after reaching
/// its final waypoint, in steps.
pub const PATROL_MIN_LEG: u32 = 16;

#[derive(Debug, Clone)]
pub struct OracleKnowledge {
    pub scene: Arc<SceneMap>,
    /// Never empty; waypoints in route order.
    pub subgoals: Vec<GroundTruthSubgoal>,
    pub start: Point,
    pub goal: Point,
    pub waypoint_radius: f64,
    pub sim: SimConfig,
}

impl OracleKnowledge {
    /// Episodes without ground-truth subgoals get one subgoal ending at the
    /// goal. The waypoint radius is half the success threshold.
    pub fn from_episode(
        scene: Arc<SceneMap>,
        episode: &Episode,
        success_threshold: f64,
        sim: SimConfig,
    ) -> Self {
        let subgoals = match &episode.ground_truth_subgoals {
            Some(s) if !s.is_empty() => s.clone(),
            _ => vec![GroundTruthSubgoal {
                text: episode.instruction.clone(),
                waypoint: episode.goal,
            }],
        };
        Self {
            scene,
            subgoals,
            start: episode.start.position(),
            goal: episode.goal,
            waypoint_radius: success_threshold / 2.0,
            sim,
        }
    }
}

/// Seeded per-decision corruption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub rate: f64,
    pub seed: u64,
}

/// Scripted backend that follows shortest paths to ground-truth waypoints.
///
/// The active waypoint is the ground-truth subgoal whose text equals the
/// active subgoal; text it cannot match (an undecomposed instruction)
/// grounds to the first ground-truth subgoal. Completion is judged against
/// the visual baseline: when a request carries no baseline image the oracle
/// cannot confirm arrival at its final anchor, keeps sweeping between that
/// anchor and the previous one, and answers `continue` at the final
/// transition check.
pub struct Oracle {
    knowledge: OracleKnowledge,
    noise: Option<Noise>,
    fields: Mutex<HashMap<Cell, Arc<DistanceField>>>,
    /// Step at which an ungrounded agent first stood on the final
    /// waypoint's cell. One oracle serves one episode.
    arrival: Mutex<Option<u32>>,
    name: String,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stage_code(stage: Stage) -> u64 {
    match stage {
        Stage::Execution => 1,
        Stage::Transition => 2,
        Stage::Summary => 3,
        Stage::Decomposition => 4,
    }
}

impl Oracle {
    pub fn new(knowledge: OracleKnowledge) -> Self {
        Self {
            knowledge,
            noise: None,
            fields: Mutex::new(HashMap::new()),
            arrival: Mutex::new(None),
            name: "oracle".to_string(),
        }
    }

    /// At `rate == 0` the output equals [`Oracle::new`] byte for byte.
    pub fn noisy(knowledge: OracleKnowledge, rate: f64, seed: u64) -> Result<Self, BackendError> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(BackendError::Config(format!(
                "corruption rate {rate} outside [0, 1]"
            )));
        }
        let mut oracle = Self::new(knowledge);
        oracle.noise = Some(Noise { rate, seed });
        oracle.name = format!("noisy-oracle(rate={rate}, seed={seed})");
        Ok(oracle)
    }

    pub fn knowledge(&self) -> &OracleKnowledge {
        &self.knowledge
    }

    fn rng(&self, stage: Stage, step: u32) -> Option<(ChaCha8Rng, f64)> {
        self.noise.map(|n| {
            let mixed = splitmix64(splitmix64(n.seed ^ stage_code(stage)) ^ step as u64);
            (ChaCha8Rng::seed_from_u64(mixed), n.rate)
        })
    }

    fn field(&self, target: Cell) -> Arc<DistanceField> {
        let mut cache = self.fields.lock().expect("distance cache lock");
        cache
            .entry(target)
            .or_insert_with(|| Arc::new(self.knowledge.scene.distance_field(target)))
            .clone()
    }

    fn scene(&self) -> &SceneMap {
        &self.knowledge.scene
    }

    fn active_waypoint(&self, subgoal_text: &str) -> usize {
        self.knowledge
            .subgoals
            .iter()
            .position(|g| g.text == subgoal_text)
            .unwrap_or(0)
    }

    fn previous_anchor(&self, index: usize) -> Point {
        match index {
            0 => self.knowledge.start,
            i => self.knowledge.subgoals[i - 1].waypoint,
        }
    }

    /// Remaining route length from `pose` to `target`, infinite if the pose
    /// or target is off the free space.
    fn route_remaining(&self, pose: &Pose, target: Point) -> f64 {
        let scene = self.scene();
        let (Some(from), Some(to)) = (scene.cell_of(pose.position()), scene.cell_of(target)) else {
            return f64::INFINITY;
        };
        self.field(to).meters(from).unwrap_or(f64::INFINITY)
    }

    /// Sweep leg length: one and a half times the steps of a straight walk
    /// between the previous anchor and the waypoint.
    fn patrol_leg(&self, wp: usize) -> u32 {
        let anchor = self.previous_anchor(wp);
        let waypoint = self.knowledge.subgoals[wp].waypoint;
        let route = match (self.scene().cell_of(anchor), self.scene().cell_of(waypoint)) {
            (Some(a), Some(w)) => self.field(w).meters(a).unwrap_or(0.0),
            _ => 0.0,
        };
        let steps = 1.5 * route / self.knowledge.sim.step_length;
        (steps.ceil() as u32).max(PATROL_MIN_LEG)
    }

    /// An ungrounded agent cannot confirm arrival at its final waypoint, so
    /// after first reaching it the agent sweeps back to the previous anchor
    /// and returns, one leg at a time.
    fn policy(&self, pose: Pose, step_index: u32, wp: usize, is_final: bool, grounded: bool) -> Action {
        let waypoint = self.knowledge.subgoals[wp].waypoint;
        let sweeping = is_final && !grounded;
        let mut target = waypoint;
        if sweeping {
            let mut arrival = self.arrival.lock().expect("arrival lock");
            if arrival.is_none() && self.scene().cell_of(pose.position()) == self.scene().cell_of(waypoint) {
                *arrival = Some(step_index);
            }
            if let Some(t) = *arrival {
                if (step_index.saturating_sub(t) / self.patrol_leg(wp)).is_multiple_of(2) {
                    target = self.previous_anchor(wp);
                }
            }
        }
        if is_final && grounded && self.route_remaining(&pose, waypoint) <= self.knowledge.waypoint_radius {
            return Action::Stop;
        }
        let scene = self.scene();
        let (Some(cur), Some(goal_cell)) = (scene.cell_of(pose.position()), scene.cell_of(target)) else {
            return Action::TurnLeft;
        };
        if cur == goal_cell {
            return if sweeping { Action::TurnLeft } else { Action::Stop };
        }
        self.steer(pose, cur, &self.field(goal_cell))
    }

    /// Turn toward the farthest straight-line-reachable cell among the next
    /// few on a shortest path, then move forward.
    fn steer(&self, pose: Pose, cur: Cell, field: &DistanceField) -> Action {
        let scene = self.scene();
        let Some(path) = scene.descend(field, cur) else {
            return Action::TurnLeft;
        };
        let here = pose.position();
        let target = path
            .iter()
            .skip(1)
            .take(LOOKAHEAD)
            .rev()
            .map(|c| scene.cell_center(*c))
            .find(|p| scene.segment_is_free(here, *p))
            .unwrap_or_else(|| scene.cell_center(path[1]));
        let bearing = bearing_between(here, target);

        let turn = self.knowledge.sim.turn_angle;
        let n = (360.0 / turn).round().max(1.0) as usize;
        let mut best: Option<(f64, f64)> = None;
        for j in 0..n {
            let change = wrap_signed(j as f64 * turn);
            let heading = normalize_heading(pose.heading + change);
            let probe = Pose { heading, ..pose };
            let blocked = step(scene, probe, Action::Forward, &self.knowledge.sim)
                .map(|r| r.collided)
                .unwrap_or(true);
            if blocked {
                continue;
            }
            let err = (wrap_signed(heading - bearing).abs() * 1e6).round() / 1e6;
            let better = match best {
                None => true,
                Some((best_err, best_change)) => {
                    (err, change.abs(), change < 0.0) < (best_err, best_change.abs(), best_change < 0.0)
                }
            };
            if better {
                best = Some((err, change));
            }
        }
        match best {
            None => Action::TurnLeft,
            Some((_, 0.0)) => Action::Forward,
            Some((_, change)) if change > 0.0 => Action::TurnLeft,
            Some(_) => Action::TurnRight,
        }
    }

    fn execution(&self, request: &ModelRequest, feed: &AgentFeed) -> String {
        let grounded = request.has_role(ROLE_VB);
        let is_final = feed.subgoal_index == feed.subgoal_count;
        let wp = self.active_waypoint(&feed.subgoal_text);
        let mut rng = self.rng(Stage::Execution, feed.step);
        let budget = request.limits.max_actions.max(1);

        let mut pose = feed.pose;
        let mut actions = Vec::with_capacity(budget);
        for i in 0..budget {
            let mut action = self.policy(pose, feed.step + i as u32, wp, is_final, grounded);
            if let Some((rng, rate)) = rng.as_mut() {
                if rng.random::<f64>() < *rate {
                    action = Action::ALL[rng.random_range(0..Action::ALL.len())];
                }
            }
            actions.push(action);
            if action == Action::Stop {
                break;
            }
            pose = step(self.scene(), pose, action, &self.knowledge.sim)
                .map(|r| r.pose)
                .unwrap_or(pose);
        }

        let waypoint = self.knowledge.subgoals[wp].waypoint;
        let remaining = self.route_remaining(&feed.pose, waypoint);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "INSTRUCTION_SEMANTICS: reach the anchor of \"{}\"",
            feed.subgoal_text
        );
        if grounded {
            let _ = writeln!(
                out,
                "VB_STTB_ANALYSIS: {remaining:.2} m of route remain since the baseline"
            );
        } else {
            let _ = writeln!(out, "VB_STTB_ANALYSIS: no image memory attached");
        }
        let _ = writeln!(
            out,
            "ANCHOR_TRAVERSAL: anchor bears {:.0} degrees",
            bearing_between(feed.pose.position(), waypoint)
        );
        let names: Vec<&str> = actions.iter().map(|a| a.as_str()).collect();
        let _ = write!(out, "ACTIONS: {}", names.join(", "));
        out
    }

    fn transition(&self, request: &ModelRequest, feed: &AgentFeed) -> String {
        let grounded = request.has_role(ROLE_VB);
        let is_final = feed.subgoal_index == feed.subgoal_count;
        let wp = self.active_waypoint(&feed.subgoal_text);
        let remaining = self.route_remaining(&feed.pose, self.knowledge.subgoals[wp].waypoint);
        let within = remaining <= self.knowledge.waypoint_radius;
        let mut verdict = if (is_final && !grounded) || !within {
            TransitionDecision::Continue
        } else {
            TransitionDecision::Switch
        };
        if let Some((mut rng, rate)) = self.rng(Stage::Transition, feed.step) {
            if rng.random::<f64>() < rate {
                verdict = match verdict {
                    TransitionDecision::Continue => TransitionDecision::Switch,
                    TransitionDecision::Switch => TransitionDecision::Continue,
                };
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "INSTRUCTION_SEMANTICS: \"{}\" completes at its anchor",
            feed.subgoal_text
        );
        if grounded {
            let _ = writeln!(out, "VB_STTB_ANALYSIS: {remaining:.2} m from the anchor");
        } else {
            let _ = writeln!(out, "VB_STTB_ANALYSIS: no baseline to compare against");
        }
        let _ = writeln!(
            out,
            "ANCHOR_TRAVERSAL: anchor {}",
            if within { "reached" } else { "not reached" }
        );
        let _ = write!(out, "DECISION: {}", verdict.as_str());
        out
    }

    fn summary(&self, request: &ModelRequest) -> String {
        let actions: Vec<&str> = request
            .images
            .iter()
            .filter_map(|i| i.role.strip_prefix(ROLE_ROLLOUT_PREFIX))
            .filter_map(|rest| rest.split_once(':').map(|(_, a)| a))
            .collect();
        let forwards = actions.iter().filter(|a| **a == "forward").count();
        let turns = actions.iter().filter(|a| a.starts_with("turn")).count();
        let last = request
            .images
            .last()
            .map(|i| i.observation.describe())
            .unwrap_or_else(|| "nothing".into());
        format!(
            "SUMMARY: {} steps, {forwards} forward and {turns} turning; final view shows {last}",
            actions.len()
        )
    }

    fn decomposition(&self) -> String {
        self.knowledge
            .subgoals
            .iter()
            .map(|g| format!("SUBGOAL: {}", g.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl ModelBackend for Oracle {
    fn complete(&self, request: &ModelRequest, feed: &AgentFeed) -> Result<BackendReply, BackendError> {
        let text = match request.stage {
            Stage::Decomposition => self.decomposition(),
            Stage::Summary => self.summary(request),
            Stage::Execution | Stage::Transition if feed.subgoal_index == 0 => {
                return Err(BackendError::Protocol(format!(
                    "{} request without an active subgoal",
                    request.stage.as_str()
                )))
            }
            Stage::Execution => self.execution(request, feed),
            Stage::Transition => self.transition(request, feed),
        };
        Ok(BackendReply::plain(text))
    }

    fn name(&self) -> &str {
        &self.name
    }
}

//! The episode loop.
//!
//! ```text
//! plan ← decompose(instruction); k ← 1; VB ← initial frontal view
//! while k ≤ K:
//!     rollout of at most H steps over forward-centred views
//!     (Stop ends the rollout only on the final subgoal)
//!     summary ← summarize(rollout)
//!     decision ← transition(panorama, VB, summary)
//!     on switch: k ← k + 1, VB ← frontal panorama view, STTB ← ∅
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AgentFeed, BackendError, BackendReply, GenerationLimits, ModelBackend, ModelRequest};
use crate::evidence::{
    parse_execution_response, parse_subgoals, parse_summary_response, parse_transition_response,
    ParseError, PromptBuilder, PromptBundle, PromptError, PromptProfile, Stage, SubGoalPlan,
    SubgoalContext, SummaryRequest, TransitionDecision,
};
use crate::memory::{MemoryError, MemoryState, RolloutBuffer, RolloutSummary};
use crate::sim::{
    local_views, panoramic_views, render_view, step, Action, Episode, Observation, Pose, SceneMap,
    SimConfig, SimError, ViewRegime, ViewSet,
};
use crate::trace::{SttbSnapshotEntry, Trace, TraceEvent, VbSnapshot, TRACE_SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub disable_dgmf: bool,
    pub disable_isgr: bool,
    pub disable_dual_fov: bool,
    pub disable_transition: bool,
    pub execution_only: bool,
}

impl Ablation {
    pub fn flag_names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (on, name) in [
            (self.disable_dgmf, "disable_dgmf"),
            (self.disable_isgr, "disable_isgr"),
            (self.disable_dual_fov, "disable_dual_fov"),
            (self.disable_transition, "disable_transition"),
            (self.execution_only, "execution_only"),
        ] {
            if on {
                out.push(name);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Rollout horizon H.
    pub horizon: usize,
    pub max_total_steps: u32,
    /// Actions accepted per execution inference.
    pub max_actions: usize,
    pub sttb_capacity: usize,
    pub success_threshold: f64,
    /// Consecutive execution parse failures that abort the episode.
    pub parse_failure_cap: u32,
    pub ablation: Ablation,
    pub sim: SimConfig,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            horizon: 8,
            max_total_steps: 300,
            max_actions: 4,
            sttb_capacity: 4,
            success_threshold: 3.0,
            parse_failure_cap: 5,
            ablation: Ablation::default(),
            sim: SimConfig::default(),
            max_output_tokens: 1024,
            temperature: 0.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: String| Err(ControllerError::Config(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if (self.max_total_steps as usize) < self.horizon {
            return bad(format!(
                "max_total_steps {} is below the horizon {}",
                self.max_total_steps, self.horizon
            ));
        }
        if self.max_actions == 0 || self.sttb_capacity == 0 || self.parse_failure_cap == 0 {
            return bad("max_actions, sttb_capacity and parse_failure_cap must be positive".into());
        }
        let positive = [
            ("success_threshold", self.success_threshold),
            ("step_length", self.sim.step_length),
            ("turn_angle", self.sim.turn_angle),
            ("fov", self.sim.fov),
            ("view_range", self.sim.view_range),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad(format!("temperature must be non-negative, got {}", self.temperature));
        }
        apply_ablation(&self.ablation).map(|_| ())
    }

    pub fn limits(&self) -> GenerationLimits {
        GenerationLimits {
            max_output_tokens: self.max_output_tokens,
            temperature: self.temperature,
            max_actions: self.max_actions,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionMode {
    /// Summary plus a transition call after every rollout.
    Verified,
    /// Switch after every rollout without a call.
    Forced,
    /// Single flat stage; the episode ends on Stop.
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub prompt: PromptProfile,
    pub decompose: bool,
    pub transition: TransitionMode,
}

impl BehaviorProfile {
    /// Images an execution bundle must carry for a given STTB length.
    pub fn execution_images(&self, sttb_len: usize) -> usize {
        let own = self.prompt.execution_regime.offsets().len();
        let other = match self.prompt.execution_regime {
            ViewRegime::Local => ViewRegime::Panoramic.offsets().len(),
            ViewRegime::Panoramic => ViewRegime::Local.offsets().len(),
        };
        let extra = if self.prompt.filtered { 0 } else { other };
        let memory = if self.prompt.image_memory { sttb_len + 1 } else { 0 };
        own + extra + memory
    }

    pub fn transition_images(&self) -> usize {
        let extra = if self.prompt.filtered {
            0
        } else {
            ViewRegime::Local.offsets().len()
        };
        ViewRegime::Panoramic.offsets().len() + extra + usize::from(self.prompt.image_memory)
    }
}

/// Maps a supported flag combination to runtime behavior. Supported: no
/// flags, any single flag, and `disable_dgmf + disable_isgr` together.
pub fn apply_ablation(a: &Ablation) -> Result<BehaviorProfile, ControllerError> {
    let flags = a.flag_names();
    let supported = flags.len() <= 1 || flags == ["disable_dgmf", "disable_isgr"];
    if !supported {
        return Err(ControllerError::Config(format!(
            "unsupported ablation combination: {}",
            flags.join(" + ")
        )));
    }
    Ok(BehaviorProfile {
        prompt: PromptProfile {
            filtered: !a.disable_dgmf,
            image_memory: !a.disable_isgr,
            execution_regime: if a.disable_dual_fov {
                ViewRegime::Panoramic
            } else {
                ViewRegime::Local
            },
        },
        decompose: !a.execution_only,
        transition: if a.execution_only {
            TransitionMode::Absent
        } else if a.disable_transition {
            TransitionMode::Forced
        } else {
            TransitionMode::Verified
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoneReason {
    Completed,
    StepCap,
    ParseFailureCap,
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("backend failed at step {step}: {error}")]
    Backend {
        step: u32,
        error: BackendError,
        /// Records emitted before the failure.
        partial: Box<Trace>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    /// 1-based; `K + 1` once every subgoal is switched off.
    pub k: usize,
    pub plan: SubGoalPlan,
    pub memory: MemoryState,
    pub action_history: Vec<Action>,
    pub pose: Pose,
    pub total_steps: u32,
    pub done: bool,
    pub done_reason: Option<DoneReason>,
}

impl AgentState {
    pub fn subgoal_count(&self) -> usize {
        self.plan.len()
    }

    fn finish(&mut self, reason: DoneReason) {
        self.done = true;
        self.done_reason = Some(reason);
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub trace: Trace,
    pub state: AgentState,
}

fn vb_snapshot(memory: &MemoryState) -> VbSnapshot {
    let vb = memory.vb();
    VbSnapshot {
        digest: vb.observation.digest(),
        subgoal_index: vb.subgoal_index,
        set_at_step: vb.set_at_step,
    }
}

struct Runner<'a> {
    episode: &'a Episode,
    scene: &'a SceneMap,
    backend: &'a dyn ModelBackend,
    config: &'a ControllerConfig,
    profile: BehaviorProfile,
    builder: PromptBuilder,
    trace: Trace,
    consecutive_failures: u32,
    rollouts: u32,
}

/// Result of one rollout.
struct Rollout {
    buffer: RolloutBuffer,
    early_stop: bool,
}

impl<'a> Runner<'a> {
    fn call(
        &mut self,
        bundle: &PromptBundle,
        state: &AgentState,
    ) -> Result<BackendReply, ControllerError> {
        let request = ModelRequest::from_bundle(bundle, self.config.limits());
        let k = state.k.min(state.plan.len());
        let feed = AgentFeed {
            pose: state.pose,
            step: state.total_steps,
            subgoal_index: if bundle.stage == Stage::Decomposition { 0 } else { k },
            subgoal_count: state.plan.len(),
            subgoal_text: state.plan.get(k).unwrap_or_default().to_string(),
        };
        match self.backend.complete(&request, &feed) {
            Ok(reply) => {
                for record in &reply.retries {
                    self.trace.push(TraceEvent::Retry {
                        stage: bundle.stage,
                        step: state.total_steps,
                        record: record.clone(),
                    });
                }
                Ok(reply)
            }
            Err(error) => {
                if let BackendError::Transport { retries, .. } = &error {
                    for record in retries {
                        self.trace.push(TraceEvent::Retry {
                            stage: bundle.stage,
                            step: state.total_steps,
                            record: record.clone(),
                        });
                    }
                }
                Err(ControllerError::Backend {
                    step: state.total_steps,
                    error,
                    partial: Box::new(std::mem::take(&mut self.trace)),
                })
            }
        }
    }

    fn log_parse_failure(&mut self, step: u32, err: &ParseError) {
        tracing::warn!(stage = err.stage.as_str(), step, "unparseable response");
        self.trace.push(TraceEvent::ParseFailure {
            step,
            stage: err.stage,
            kind: err.kind,
            raw: err.raw.clone(),
            consecutive: self.consecutive_failures,
        });
    }

    fn frontal(&self, pose: &Pose) -> Observation {
        render_view(self.scene, pose, 0.0, &self.config.sim)
    }

    fn views(&self, regime: ViewRegime, pose: &Pose) -> ViewSet {
        match regime {
            ViewRegime::Local => local_views(self.scene, pose, &self.config.sim),
            ViewRegime::Panoramic => panoramic_views(self.scene, pose, &self.config.sim),
        }
    }

    fn other_regime(regime: ViewRegime) -> ViewRegime {
        match regime {
            ViewRegime::Local => ViewRegime::Panoramic,
            ViewRegime::Panoramic => ViewRegime::Local,
        }
    }

    /// Decomposes the instruction, retrying unparseable plans up to the
    /// failure cap. `None` means the cap fired.
    fn plan(&mut self, state: &mut AgentState) -> Result<Option<SubGoalPlan>, ControllerError> {
        if !self.profile.decompose {
            let plan = SubGoalPlan::undecomposed(&self.episode.instruction);
            self.trace.push(TraceEvent::Plan {
                subgoals: plan.subgoals().to_vec(),
                decomposed: false,
                bundle_digest: None,
            });
            return Ok(Some(plan));
        }
        let bundle = self.builder.decomposition(&self.episode.instruction)?;
        loop {
            let reply = self.call(&bundle, state)?;
            match parse_subgoals(&reply.text) {
                Ok(plan) => {
                    self.consecutive_failures = 0;
                    self.trace.push(TraceEvent::Plan {
                        subgoals: plan.subgoals().to_vec(),
                        decomposed: true,
                        bundle_digest: Some(bundle.digest()),
                    });
                    return Ok(Some(plan));
                }
                Err(e) => {
                    self.consecutive_failures += 1;
                    self.log_parse_failure(state.total_steps, &e);
                    if self.consecutive_failures >= self.config.parse_failure_cap {
                        return Ok(None);
                    }
                }
            }
        }
    }

    fn execution_rollout(&mut self, state: &mut AgentState) -> Result<Rollout, ControllerError> {
        let h_max = self.config.horizon;
        let is_final = state.k == state.plan.len();
        let regime = self.profile.prompt.execution_regime;
        self.rollouts += 1;
        self.trace.push(TraceEvent::RolloutStart {
            rollout: self.rollouts,
            step: state.total_steps,
            subgoal_index: state.k,
        });

        let mut buffer = RolloutBuffer::new(h_max);
        let mut h = 0usize;
        let mut early_stop = false;
        while h < h_max && state.total_steps < self.config.max_total_steps && !early_stop {
            let views = self.views(regime, &state.pose);
            let extra = (!self.profile.prompt.filtered)
                .then(|| self.views(Self::other_regime(regime), &state.pose));
            let goal_text = state.plan.get(state.k).unwrap_or_default().to_string();
            let ctx = SubgoalContext {
                text: &goal_text,
                index: state.k,
                count: state.plan.len(),
                instruction: &self.episode.instruction,
            };
            let bundle = self
                .builder
                .execution(&ctx, &views, &state.memory, extra.as_ref())?;
            let reply = self.call(&bundle, state)?;

            let parsed = match parse_execution_response(&reply.text, self.config.max_actions) {
                Ok(p) => p,
                Err(e) => {
                    self.consecutive_failures += 1;
                    state.total_steps += 1;
                    h += 1;
                    self.log_parse_failure(state.total_steps, &e);
                    if self.consecutive_failures >= self.config.parse_failure_cap {
                        state.finish(DoneReason::ParseFailureCap);
                        break;
                    }
                    continue;
                }
            };
            self.consecutive_failures = 0;
            self.trace.push(TraceEvent::Execution {
                step: state.total_steps,
                subgoal_index: state.k,
                bundle_digest: bundle.digest(),
                image_count: bundle.image_count(),
                sttb_len: state.memory.sttb_len(),
                has_vb: bundle.has_baseline(),
                evidence: parsed.evidence.clone(),
                actions: parsed.actions.clone(),
                early_stop: parsed.early_stop,
            });

            let mut moved = Vec::new();
            for &action in &parsed.actions {
                if h >= h_max || state.total_steps >= self.config.max_total_steps {
                    break;
                }
                h += 1;
                state.total_steps += 1;
                state.action_history.push(action);
                let before = state.pose;
                let (after, collided) = if action == Action::Stop {
                    // terminal only on the final subgoal, a no-op otherwise
                    if is_final {
                        early_stop = true;
                    }
                    (before, false)
                } else {
                    let r = step(self.scene, before, action, &self.config.sim)?;
                    (r.pose, r.collided)
                };
                state.pose = after;
                let frontal = self.frontal(&after);
                self.trace.push(TraceEvent::Step {
                    step: state.total_steps,
                    subgoal_index: state.k,
                    pose_before: before,
                    pose_after: after,
                    action,
                    collided,
                    executed: action.is_motion(),
                    frontal_digest: frontal.digest(),
                });
                if action.is_motion() {
                    moved.push(action);
                    buffer.append(state.total_steps, frontal, action)?;
                }
                if early_stop {
                    break;
                }
            }

            let frontal = self.frontal(&state.pose);
            let appended = SttbSnapshotEntry {
                step: state.total_steps,
                digest: frontal.digest(),
                actions: moved.clone(),
            };
            state.memory.sttb_update(state.total_steps, frontal, moved);
            self.trace.push(TraceEvent::Memory {
                step: state.total_steps,
                appended,
                sttb: state
                    .memory
                    .sttb()
                    .map(|e| SttbSnapshotEntry {
                        step: e.step,
                        digest: e.observation.digest(),
                        actions: e.actions.clone(),
                    })
                    .collect(),
                vb: vb_snapshot(&state.memory),
            });
        }
        Ok(Rollout { buffer, early_stop })
    }

    fn summarize(&mut self, state: &AgentState, rollout: &RolloutBuffer) -> Result<RolloutSummary, ControllerError> {
        let (summary, canned, digest) = match self.builder.summary(rollout) {
            SummaryRequest::Canned(s) => (s, true, None),
            SummaryRequest::Model(bundle) => {
                let reply = self.call(&bundle, state)?;
                let summary = match parse_summary_response(&reply.text, rollout.actions()) {
                    Ok(s) => s,
                    Err(e) => {
                        self.log_parse_failure(state.total_steps, &e);
                        let names: Vec<&str> = rollout.actions().iter().map(|a| a.as_str()).collect();
                        RolloutSummary::new(format!("executed {}", names.join(", ")), rollout.actions())?
                    }
                };
                (summary, false, Some(bundle.digest()))
            }
        };
        self.trace.push(TraceEvent::Summary {
            step: state.total_steps,
            rollout: self.rollouts,
            step_count: summary.step_count(),
            canned,
            text: summary.text().to_string(),
            bundle_digest: digest,
        });
        Ok(summary)
    }

    /// Returns the decision and the frontal panorama view used as the next
    /// baseline.
    fn transition_decide(
        &mut self,
        state: &AgentState,
        summary: &RolloutSummary,
    ) -> Result<(TransitionDecision, Observation), ControllerError> {
        let pan = panoramic_views(self.scene, &state.pose, &self.config.sim);
        let extra = (!self.profile.prompt.filtered)
            .then(|| local_views(self.scene, &state.pose, &self.config.sim));
        let goal_text = state.plan.get(state.k).unwrap_or_default().to_string();
        let ctx = SubgoalContext {
            text: &goal_text,
            index: state.k,
            count: state.plan.len(),
            instruction: &self.episode.instruction,
        };
        let bundle = self
            .builder
            .transition(&ctx, &pan, &state.memory, summary, extra.as_ref())?;
        let reply = self.call(&bundle, state)?;
        let (evidence, decision, failed) = match parse_transition_response(&reply.text) {
            Ok((ev, d)) => (Some(ev), d, false),
            Err(e) => {
                self.log_parse_failure(state.total_steps, &e);
                (None, TransitionDecision::Continue, true)
            }
        };
        self.trace.push(TraceEvent::Transition {
            step: state.total_steps,
            subgoal_index: state.k,
            bundle_digest: Some(bundle.digest()),
            image_count: bundle.image_count(),
            has_vb: bundle.has_baseline(),
            evidence,
            decision,
            forced: false,
            parse_failed: failed,
        });
        Ok((decision, pan.frontal().clone()))
    }

    fn advance_subgoal(&mut self, state: &mut AgentState, decision: TransitionDecision, baseline: Observation) {
        advance_subgoal(state, decision, baseline);
        if decision == TransitionDecision::Switch {
            self.trace.push(TraceEvent::SttbReset {
                step: state.total_steps,
                subgoal_index: state.k,
                vb: vb_snapshot(&state.memory),
            });
        }
    }
}

/// `k ← k + 1` on switch, with the baseline replaced and the STTB cleared.
/// Switching off the final subgoal completes the episode.
pub fn advance_subgoal(state: &mut AgentState, decision: TransitionDecision, baseline: Observation) {
    if decision != TransitionDecision::Switch {
        return;
    }
    state.k += 1;
    state.memory.vb_update(baseline, state.k, state.total_steps);
    state.memory.sttb_reset();
    if state.k > state.plan.len() {
        state.finish(DoneReason::Completed);
    }
}

/// Runs one episode to completion or a cap.
pub fn run_episode(
    episode: &Episode,
    scene: &SceneMap,
    backend: &dyn ModelBackend,
    config: &ControllerConfig,
) -> Result<EpisodeRun, ControllerError> {
    config.validate()?;
    let profile = apply_ablation(&config.ablation)?;
    scene.check_pose(&episode.start)?;
    let mut runner = Runner {
        episode,
        scene,
        backend,
        config,
        profile,
        builder: PromptBuilder::new(profile.prompt, config.sim, config.max_actions),
        trace: Trace::default(),
        consecutive_failures: 0,
        rollouts: 0,
    };
    runner.trace.push(TraceEvent::Start {
        schema: TRACE_SCHEMA.to_string(),
        episode_id: episode.id.clone(),
        scene_id: episode.scene_id.clone(),
        instruction: episode.instruction.clone(),
        start: episode.start,
        goal: episode.goal,
        backend: backend.name().to_string(),
        config: *config,
    });

    let initial = render_view(scene, &episode.start, 0.0, &config.sim);
    let mut state = AgentState {
        k: 1,
        plan: SubGoalPlan::undecomposed(&episode.instruction),
        memory: MemoryState::new(config.sttb_capacity, initial, 0),
        action_history: Vec::new(),
        pose: episode.start,
        total_steps: 0,
        done: false,
        done_reason: None,
    };
    match runner.plan(&mut state)? {
        Some(plan) => state.plan = plan,
        None => state.finish(DoneReason::ParseFailureCap),
    }
    if !state.done {
        runner.trace.push(TraceEvent::BaselineInit {
            step: 0,
            vb: vb_snapshot(&state.memory),
        });
    }

    while !state.done {
        let rollout = runner.execution_rollout(&mut state)?;
        if state.done {
            break;
        }
        match profile.transition {
            TransitionMode::Absent => {
                if rollout.early_stop {
                    state.k += 1;
                    state.finish(DoneReason::Completed);
                }
            }
            TransitionMode::Forced => {
                runner.trace.push(TraceEvent::Transition {
                    step: state.total_steps,
                    subgoal_index: state.k,
                    bundle_digest: None,
                    image_count: 0,
                    has_vb: false,
                    evidence: None,
                    decision: TransitionDecision::Switch,
                    forced: true,
                    parse_failed: false,
                });
                let baseline = runner.frontal(&state.pose);
                runner.advance_subgoal(&mut state, TransitionDecision::Switch, baseline);
            }
            TransitionMode::Verified => {
                let summary = runner.summarize(&state, &rollout.buffer)?;
                let (decision, baseline) = runner.transition_decide(&state, &summary)?;
                runner.advance_subgoal(&mut state, decision, baseline);
            }
        }
        if !state.done && state.total_steps >= config.max_total_steps {
            state.finish(DoneReason::StepCap);
        }
    }

    runner.trace.push(TraceEvent::Done {
        reason: state.done_reason.expect("finished state has a reason"),
        total_steps: state.total_steps,
        subgoal_index: state.k,
        subgoal_count: state.plan.len(),
        final_pose: state.pose,
        action_history: state.action_history.clone(),
    });
    Ok(EpisodeRun {
        trace: runner.trace,
        state,
    })
}

//! Post-hoc invariant checks over a finished trace.
//!
//! The checker replays the event stream with its own bookkeeping (subgoal
//! index, an unbounded log of STTB appends, the current baseline) and
//! reports every disagreement with what the controller recorded.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::controller::{apply_ablation, ControllerConfig, DoneReason, TransitionMode};
use crate::evidence::{Stage, TransitionDecision};
use crate::sim::Action;
use crate::trace::{Trace, TraceEvent, VbSnapshot};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub seq: u64,
    pub rule: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} [{}] {}", self.seq, self.rule, self.message)
    }
}

struct Auditor {
    out: Vec<Violation>,
    seq: u64,
}

impl Auditor {
    fn check(&mut self, ok: bool, rule: &'static str, message: impl FnOnce() -> String) {
        if !ok {
            self.out.push(Violation {
                seq: self.seq,
                rule,
                message: message(),
            });
        }
    }
}

#[derive(Default)]
struct RolloutSpan {
    steps: usize,
    /// Last step in the span was a Stop on the final subgoal.
    ended_by_stop: bool,
    active: bool,
}

pub fn audit_trace(trace: &Trace) -> Vec<Violation> {
    let mut a = Auditor {
        out: Vec::new(),
        seq: 0,
    };
    let Some(TraceEvent::Start { config, .. }) = trace.records.first().map(|r| &r.event) else {
        a.check(false, "start", || "trace does not open with a start record".into());
        return a.out;
    };
    let config: ControllerConfig = *config;
    let profile = match apply_ablation(&config.ablation) {
        Ok(p) => p,
        Err(e) => {
            a.check(false, "config", || e.to_string());
            return a.out;
        }
    };

    let mut k = 0usize;
    let mut big_k = 0usize;
    let mut last_step = 0u32;
    let mut shadow: Vec<String> = Vec::new();
    let mut vb: Option<VbSnapshot> = None;
    let mut last_frontal: Option<String> = None;
    let mut pending_reset = false;
    let mut switches = 0usize;
    let mut transitions = 0usize;
    let mut rollouts = 0usize;
    let mut span = RolloutSpan::default();
    let mut done_seen = false;

    let close_span = |a: &mut Auditor, span: &mut RolloutSpan, capped: bool, k: usize, big_k: usize| {
        if span.active && span.steps < config.horizon && !capped {
            a.check(span.ended_by_stop && k == big_k, "early_stop", || {
                format!(
                    "rollout ended after {} of {} steps without a final-subgoal stop",
                    span.steps, config.horizon
                )
            });
        }
        span.active = false;
    };

    for (i, record) in trace.records.iter().enumerate() {
        a.seq = record.seq;
        a.check(record.seq == i as u64, "seq", || format!("expected seq {i}"));
        a.check(!done_seen, "done", || "record after done".into());
        if pending_reset {
            a.check(matches!(record.event, TraceEvent::SttbReset { .. }), "switch_reset", || {
                "switch is not immediately followed by an STTB reset".into()
            });
            pending_reset = false;
        }
        match &record.event {
            TraceEvent::Start { .. } => a.check(i == 0, "start", || "second start record".into()),
            TraceEvent::Plan { subgoals, decomposed, .. } => {
                a.check(!subgoals.is_empty(), "plan", || "empty plan".into());
                a.check(*decomposed == profile.decompose, "plan", || {
                    "decomposition does not match the ablation profile".into()
                });
                big_k = subgoals.len();
                k = 1;
            }
            TraceEvent::BaselineInit { vb: init, .. } => {
                a.check(init.subgoal_index == 1 && init.set_at_step == 0, "vb", || {
                    "initial baseline must belong to subgoal 1 at step 0".into()
                });
                vb = Some(init.clone());
            }
            TraceEvent::RolloutStart { subgoal_index, step, .. } => {
                close_span(&mut a, &mut span, false, k, big_k);
                rollouts += 1;
                span = RolloutSpan {
                    active: true,
                    ..Default::default()
                };
                a.check(*subgoal_index == k, "k", || format!("rollout at k={subgoal_index}, expected {k}"));
                a.check(*step == last_step, "step", || "rollout does not start at the current step".into());
            }
            TraceEvent::Execution {
                subgoal_index,
                image_count,
                sttb_len,
                has_vb,
                actions,
                ..
            } => {
                a.check(*subgoal_index == k, "k", || format!("execution at k={subgoal_index}, expected {k}"));
                let expected_len = shadow.len().min(config.sttb_capacity);
                a.check(*sttb_len == expected_len, "sttb_shadow", || {
                    format!("bundle saw STTB length {sttb_len}, shadow log says {expected_len}")
                });
                let expected = profile.execution_images(*sttb_len);
                a.check(*image_count == expected, "image_count", || {
                    format!("execution bundle has {image_count} images, expected {expected}")
                });
                a.check(*has_vb == profile.prompt.image_memory, "image_count", || {
                    "baseline slot presence does not match the profile".into()
                });
                a.check(!actions.is_empty() && actions.len() <= config.max_actions, "actions", || {
                    format!("{} actions in one inference", actions.len())
                });
                last_frontal = None;
            }
            TraceEvent::Step {
                step,
                subgoal_index,
                pose_before,
                pose_after,
                action,
                collided,
                executed,
                frontal_digest,
            } => {
                a.check(*step == last_step + 1, "step", || format!("step {step} after {last_step}"));
                last_step = *step;
                a.check(*subgoal_index == k, "k", || format!("step at k={subgoal_index}, expected {k}"));
                span.steps += 1;
                span.ended_by_stop = *action == Action::Stop && k == big_k;
                if *action == Action::Stop {
                    a.check(!executed && pose_before == pose_after && !collided, "stop_motion", || {
                        "stop executed as motion".into()
                    });
                } else {
                    a.check(*executed, "stop_motion", || "motion action not executed".into());
                }
                if *collided {
                    a.check(pose_before == pose_after, "collision", || "collided step moved the agent".into());
                }
                last_frontal = Some(frontal_digest.clone());
            }
            TraceEvent::ParseFailure { step, stage, .. } => {
                if *stage == Stage::Execution {
                    a.check(*step == last_step + 1, "step", || format!("step {step} after {last_step}"));
                    last_step = *step;
                    span.steps += 1;
                    span.ended_by_stop = false;
                }
            }
            TraceEvent::Memory {
                step,
                appended,
                sttb,
                vb: seen_vb,
            } => {
                a.check(*step == last_step, "sttb_shadow", || "memory update off the current step".into());
                if let Some(f) = &last_frontal {
                    a.check(&appended.digest == f, "sttb_shadow", || {
                        "appended entry is not the post-execution frontal view".into()
                    });
                }
                shadow.push(appended.digest.clone());
                let keep = shadow.len().min(config.sttb_capacity);
                let expected: Vec<&String> = shadow[shadow.len() - keep..].iter().collect();
                let got: Vec<&String> = sttb.iter().map(|e| &e.digest).collect();
                a.check(got == expected, "sttb_shadow", || {
                    format!("STTB holds {} entries that differ from the last {keep} appends", got.len())
                });
                a.check(Some(seen_vb) == vb.as_ref(), "vb", || "baseline changed outside a switch".into());
            }
            TraceEvent::Retry { .. } => {}
            TraceEvent::Summary { step_count, text, .. } => {
                a.check(*step_count == 0 || !text.trim().is_empty(), "summary", || "empty summary".into());
            }
            TraceEvent::Transition {
                subgoal_index,
                image_count,
                has_vb,
                decision,
                forced,
                ..
            } => {
                close_span(&mut a, &mut span, last_step >= config.max_total_steps, k, big_k);
                transitions += 1;
                a.check(*subgoal_index == k, "k", || format!("transition at k={subgoal_index}, expected {k}"));
                match profile.transition {
                    TransitionMode::Absent => a.check(false, "transition", || {
                        "transition record in a single-stage run".into()
                    }),
                    TransitionMode::Forced => a.check(*forced && *decision == TransitionDecision::Switch, "transition", || {
                        "transition not forced to switch".into()
                    }),
                    TransitionMode::Verified => {
                        a.check(!forced, "transition", || "forced transition in a verified run".into());
                        let expected = profile.transition_images();
                        a.check(*image_count == expected, "image_count", || {
                            format!("transition bundle has {image_count} images, expected {expected}")
                        });
                        a.check(*has_vb == profile.prompt.image_memory, "image_count", || {
                            "baseline slot presence does not match the profile".into()
                        });
                    }
                }
                if *decision == TransitionDecision::Switch {
                    switches += 1;
                    pending_reset = true;
                }
            }
            TraceEvent::SttbReset {
                step,
                subgoal_index,
                vb: new_vb,
            } => {
                let preceded = i > 0
                    && matches!(
                        trace.records[i - 1].event,
                        TraceEvent::Transition {
                            decision: TransitionDecision::Switch,
                            ..
                        }
                    );
                a.check(preceded, "switch_reset", || "STTB reset without a switch".into());
                a.check(*subgoal_index == k + 1, "k", || {
                    format!("switch moved k from {k} to {subgoal_index}")
                });
                k = *subgoal_index;
                a.check(new_vb.set_at_step == *step && *step == last_step, "vb", || {
                    "baseline timestamp is not the switch step".into()
                });
                a.check(new_vb.subgoal_index == k, "vb", || "baseline subgoal index is stale".into());
                vb = Some(new_vb.clone());
                shadow.clear();
            }
            TraceEvent::Done {
                reason,
                total_steps,
                subgoal_index,
                subgoal_count,
                ..
            } => {
                done_seen = true;
                close_span(&mut a, &mut span, *reason != DoneReason::Completed || *total_steps >= config.max_total_steps, k, big_k);
                a.check(*total_steps == last_step, "step", || "done step count disagrees with the log".into());
                a.check(*total_steps <= config.max_total_steps, "step_cap", || "step cap exceeded".into());
                a.check(*subgoal_count == big_k, "plan", || "done record disagrees on K".into());
                match reason {
                    DoneReason::Completed => {
                        a.check(*subgoal_index == big_k + 1, "completed", || {
                            format!("completed with k={subgoal_index}, K={big_k}")
                        });
                        if profile.transition != TransitionMode::Absent {
                            a.check(switches == big_k, "completed", || {
                                format!("completed with {switches} switches, K={big_k}")
                            });
                        }
                    }
                    DoneReason::StepCap => {
                        a.check(*total_steps >= config.max_total_steps, "step_cap", || {
                            "step cap reported before the cap".into()
                        });
                        a.check(*subgoal_index == k, "k", || "done record disagrees on k".into());
                    }
                    DoneReason::ParseFailureCap => {}
                }
                match profile.transition {
                    TransitionMode::Absent => a.check(transitions == 0, "transition", || {
                        format!("{transitions} transition records in a single-stage run")
                    }),
                    TransitionMode::Forced => a.check(switches == rollouts, "transition", || {
                        format!("{switches} forced switches for {rollouts} rollouts")
                    }),
                    TransitionMode::Verified => {}
                }
            }
        }
        if span.active {
            a.check(span.steps <= config.horizon, "horizon", || {
                format!("rollout span of {} steps exceeds H={}", span.steps, config.horizon)
            });
        }
    }
    a.seq = trace.records.len() as u64;
    a.check(done_seen, "done", || "trace has no done record".into());
    a.check(!pending_reset, "switch_reset", || "trace ends right after a switch".into());
    a.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceRecord;

    #[test]
    fn empty_trace_is_flagged() {
        assert_eq!(audit_trace(&Trace::default())[0].rule, "start");
    }

    #[test]
    fn missing_reset_is_flagged() {
        let trace = Trace {
            records: vec![TraceRecord {
                seq: 0,
                event: TraceEvent::Plan {
                    subgoals: vec!["a".into()],
                    decomposed: true,
                    bundle_digest: None,
                },
            }],
        };
        assert!(!audit_trace(&trace).is_empty());
    }
}

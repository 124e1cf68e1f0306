//! Per-episode JSONL event log.
//!
//! Each line is one [`TraceRecord`]: a sequence number plus a tagged event.
//! Bundles are represented by their digests, observations by theirs.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::backend::RetryRecord;
use crate::controller::{ControllerConfig, DoneReason};
use crate::evidence::{Evidence, ParseErrorKind, Stage, TransitionDecision};
use crate::sim::{Action, Point, Pose};

pub const TRACE_SCHEMA: &str = "stagenav.trace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SttbSnapshotEntry {
    pub step: u32,
    pub digest: String,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbSnapshot {
    pub digest: String,
    pub subgoal_index: usize,
    pub set_at_step: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Start {
        schema: String,
        episode_id: String,
        scene_id: String,
        instruction: String,
        start: Pose,
        goal: Point,
        backend: String,
        config: ControllerConfig,
    },
    Plan {
        subgoals: Vec<String>,
        decomposed: bool,
        bundle_digest: Option<String>,
    },
    BaselineInit {
        step: u32,
        vb: VbSnapshot,
    },
    RolloutStart {
        rollout: u32,
        step: u32,
        subgoal_index: usize,
    },
    Execution {
        step: u32,
        subgoal_index: usize,
        bundle_digest: String,
        image_count: usize,
        sttb_len: usize,
        has_vb: bool,
        evidence: Evidence,
        actions: Vec<Action>,
        early_stop: bool,
    },
    Step {
        step: u32,
        subgoal_index: usize,
        pose_before: Pose,
        pose_after: Pose,
        action: Action,
        collided: bool,
        /// False for a Stop, which never moves the agent.
        executed: bool,
        frontal_digest: String,
    },
    ParseFailure {
        step: u32,
        stage: Stage,
        kind: ParseErrorKind,
        raw: String,
        consecutive: u32,
    },
    Memory {
        step: u32,
        appended: SttbSnapshotEntry,
        sttb: Vec<SttbSnapshotEntry>,
        vb: VbSnapshot,
    },
    Retry {
        stage: Stage,
        step: u32,
        record: RetryRecord,
    },
    Summary {
        step: u32,
        rollout: u32,
        step_count: usize,
        canned: bool,
        text: String,
        bundle_digest: Option<String>,
    },
    Transition {
        step: u32,
        subgoal_index: usize,
        /// Absent when the switch was forced without a model call.
        bundle_digest: Option<String>,
        image_count: usize,
        has_vb: bool,
        evidence: Option<Evidence>,
        decision: TransitionDecision,
        forced: bool,
        parse_failed: bool,
    },
    SttbReset {
        step: u32,
        /// Active subgoal after the switch.
        subgoal_index: usize,
        vb: VbSnapshot,
    },
    Done {
        reason: DoneReason,
        total_steps: u32,
        subgoal_index: usize,
        subgoal_count: usize,
        final_pose: Pose,
        action_history: Vec<Action>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, event: TraceEvent) {
        let seq = self.records.len() as u64;
        self.records.push(TraceRecord { seq, event });
    }

    pub fn events(&self) -> impl DoubleEndedIterator<Item = &TraceEvent> {
        self.records.iter().map(|r| &r.event)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_jsonl().as_bytes())
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut records = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            records.push(serde_json::from_str(line)?);
        }
        Ok(Self { records })
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> std::io::Result<Self> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
        }
        Ok(Self { records })
    }

    pub fn done(&self) -> Option<(DoneReason, u32, &Pose)> {
        self.events().rev().find_map(|e| match e {
            TraceEvent::Done {
                reason,
                total_steps,
                final_pose,
                ..
            } => Some((*reason, *total_steps, final_pose)),
            _ => None,
        })
    }

    pub fn start(&self) -> Option<&TraceEvent> {
        self.events().find(|e| matches!(e, TraceEvent::Start { .. }))
    }

    /// Start pose followed by the pose after every executed step.
    pub fn path(&self) -> Vec<Pose> {
        let mut out = Vec::new();
        for e in self.events() {
            match e {
                TraceEvent::Start { start, .. } => out.push(*start),
                TraceEvent::Step { pose_after, .. } => out.push(*pose_after),
                _ => {}
            }
        }
        out
    }
}

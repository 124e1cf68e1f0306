//! Image-level navigation memory.
//!
//! [`MemoryState`] pairs a bounded short-term trajectory buffer (recent
//! frontal observations, each with the actions that led to it) with a visual
//! baseline that is only replaced when a subgoal is switched.
//! [`RolloutBuffer`] collects one execution rollout for summarization.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Action, Observation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("rollout buffer is full (horizon {horizon})")]
    HorizonOverflow { horizon: usize },
    #[error("rollout step {got} does not follow step {previous}")]
    StepOrder { previous: u32, got: u32 },
    #[error("rollout summary text is empty for a rollout of {step_count} steps")]
    EmptySummary { step_count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SttbEntry {
    /// Global step index at which the observation was taken.
    pub step: u32,
    pub observation: Observation,
    /// Actions executed since the previous entry.
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualBaseline {
    pub observation: Observation,
    /// 1-based subgoal index that was active when the baseline was set.
    pub subgoal_index: usize,
    pub set_at_step: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    capacity: usize,
    sttb: VecDeque<SttbEntry>,
    vb: VisualBaseline,
}

impl MemoryState {
    /// Initializes with an empty buffer and the baseline taken from the
    /// initial observation.
    pub fn new(capacity: usize, initial: Observation, step: u32) -> Self {
        Self {
            capacity: capacity.max(1),
            sttb: VecDeque::with_capacity(capacity),
            vb: VisualBaseline {
                observation: initial,
                subgoal_index: 1,
                set_at_step: step,
            },
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sttb(&self) -> impl ExactSizeIterator<Item = &SttbEntry> {
        self.sttb.iter()
    }

    pub fn sttb_len(&self) -> usize {
        self.sttb.len()
    }

    pub fn vb(&self) -> &VisualBaseline {
        &self.vb
    }

    /// Appends, evicting the oldest entry past capacity.
    pub fn sttb_update(&mut self, step: u32, frontal: Observation, actions: Vec<Action>) {
        self.sttb.push_back(SttbEntry {
            step,
            observation: frontal,
            actions,
        });
        while self.sttb.len() > self.capacity {
            self.sttb.pop_front();
        }
    }

    pub fn vb_update(&mut self, baseline: Observation, subgoal_index: usize, step: u32) {
        self.vb = VisualBaseline {
            observation: baseline,
            subgoal_index,
            set_at_step: step,
        };
    }

    pub fn sttb_reset(&mut self) {
        self.sttb.clear();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutEntry {
    pub step: u32,
    pub observation: Observation,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBuffer {
    horizon: usize,
    entries: Vec<RolloutEntry>,
}

impl RolloutBuffer {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            entries: Vec::with_capacity(horizon),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn entries(&self) -> &[RolloutEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn append(
        &mut self,
        step: u32,
        frontal: Observation,
        action: Action,
    ) -> Result<(), MemoryError> {
        if self.entries.len() >= self.horizon {
            return Err(MemoryError::HorizonOverflow {
                horizon: self.horizon,
            });
        }
        if let Some(last) = self.entries.last() {
            if step <= last.step {
                return Err(MemoryError::StepOrder {
                    previous: last.step,
                    got: step,
                });
            }
        }
        self.entries.push(RolloutEntry {
            step,
            observation: frontal,
            action,
        });
        Ok(())
    }

    pub fn actions(&self) -> Vec<Action> {
        self.entries.iter().map(|e| e.action).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    text: String,
    step_count: usize,
    actions_taken: Vec<Action>,
}

impl RolloutSummary {
    pub fn new(text: impl Into<String>, actions_taken: Vec<Action>) -> Result<Self, MemoryError> {
        let text = text.into();
        let step_count = actions_taken.len();
        if step_count > 0 && text.trim().is_empty() {
            return Err(MemoryError::EmptySummary { step_count });
        }
        Ok(Self {
            text,
            step_count,
            actions_taken,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn actions_taken(&self) -> &[Action] {
        &self.actions_taken
    }
}

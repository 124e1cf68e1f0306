//! Decision-conditioned prompt construction and structured response parsing.
//!
//! Every model call is built from a stage-specific template that asks the
//! model to lay out the evidence relevant to that one decision in fixed
//! fields before answering. Responses use `FIELD: value` lines; the parsers
//! here either return a complete value or a typed [`ParseError`].

mod parse;
mod prompt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sim::Observation;

pub use parse::{
    parse_execution_response, parse_subgoals, parse_summary_response, parse_transition_response,
    ExecutionReply, ParseError, ParseErrorKind,
};
pub use prompt::{PromptBuilder, PromptProfile, SubgoalContext, SummaryRequest};

pub const PROMPT_SCHEMA_VERSION: &str = "stagenav.prompt/1";

/// Field headers the execution and transition templates require.
pub const FIELD_INSTRUCTION_SEMANTICS: &str = "INSTRUCTION_SEMANTICS";
pub const FIELD_VB_STTB_ANALYSIS: &str = "VB_STTB_ANALYSIS";
pub const FIELD_ANCHOR_TRAVERSAL: &str = "ANCHOR_TRAVERSAL";
pub const EVIDENCE_FIELDS: [&str; 3] = [
    FIELD_INSTRUCTION_SEMANTICS,
    FIELD_VB_STTB_ANALYSIS,
    FIELD_ANCHOR_TRAVERSAL,
];

/// Role tag of the visual-baseline image slot.
pub const ROLE_VB: &str = "vb";
pub const ROLE_STTB_PREFIX: &str = "sttb:";
pub const ROLE_ROLLOUT_PREFIX: &str = "rollout:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Execution,
    Transition,
    Summary,
    Decomposition,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Execution => "execution",
            Stage::Transition => "transition",
            Stage::Summary => "summary",
            Stage::Decomposition => "decomposition",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("expected {expected:?} views, got {got:?}")]
    RegimeMismatch {
        expected: crate::sim::ViewRegime,
        got: crate::sim::ViewRegime,
    },
    #[error("rollout of {step_count} steps has no summary text")]
    MissingSummary { step_count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSlot {
    pub role: String,
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub schema_version: String,
    pub stage: Stage,
    pub system_text: String,
    pub user_text: String,
    pub images: Vec<ImageSlot>,
}

impl PromptBundle {
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn count_role_prefix(&self, prefix: &str) -> usize {
        self.images.iter().filter(|s| s.role.starts_with(prefix)).count()
    }

    pub fn has_baseline(&self) -> bool {
        self.images.iter().any(|s| s.role == ROLE_VB)
    }
}

/// The three reasoning fields. `None` means the model did not state it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Evidence {
    pub instruction_semantics: Option<String>,
    pub vb_sttb_analysis: Option<String>,
    pub anchor_traversal: Option<String>,
    pub raw: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionDecision {
    Continue,
    Switch,
}

impl TransitionDecision {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransitionDecision::Continue => "continue",
            TransitionDecision::Switch => "switch",
        }
    }
}

/// Ordered subgoals, never empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGoalPlan {
    subgoals: Vec<String>,
}

impl SubGoalPlan {
    pub fn new(subgoals: Vec<String>) -> Option<Self> {
        if subgoals.is_empty() || subgoals.iter().any(|s| s.trim().is_empty()) {
            None
        } else {
            Some(Self { subgoals })
        }
    }

    /// A single subgoal holding the whole instruction.
    pub fn undecomposed(instruction: &str) -> Self {
        Self {
            subgoals: vec![instruction.to_string()],
        }
    }

    pub fn subgoals(&self) -> &[String] {
        &self.subgoals
    }

    /// K.
    pub fn len(&self) -> usize {
        self.subgoals.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// 1-based lookup.
    pub fn get(&self, k: usize) -> Option<&str> {
        k.checked_sub(1)
            .and_then(|i| self.subgoals.get(i))
            .map(String::as_str)
    }
}

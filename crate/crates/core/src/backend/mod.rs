//! Policy backends.
//!
//! A [`ModelBackend`] answers one [`ModelRequest`] with response text in the
//! `FIELD: value` schema. [`Oracle`] is a scripted planner with ground-truth
//! knowledge (optionally with seeded decision noise); [`RemoteBackend`]
//! speaks a chat-completions wire format to a hosted vision-language model.

mod oracle;
mod remote;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{PromptBundle, Stage};
use crate::sim::{render_png, Observation, Pose};

pub use oracle::{Noise, Oracle, OracleKnowledge};
pub use remote::{
    HttpResponse, RemoteBackend, RemoteConfig, RemoteCounters, Transport, TransportFailure,
    TransportFailureKind, UreqTransport, ENV_API_KEY, ENV_ENDPOINT_URL, ENV_MODEL, ENV_TIMEOUT_SECS,
};

pub const IMAGE_MEDIA_TYPE: &str = "image/png";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationLimits {
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub max_actions: usize,
}

impl Default for GenerationLimits {
    fn default() -> Self {
        Self {
            max_output_tokens: 1024,
            temperature: 0.0,
            max_actions: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePart {
    pub role: String,
    pub media_type: String,
    pub observation: Observation,
}

impl ImagePart {
    /// Base64 of the rendered PNG.
    pub fn base64_payload(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(render_png(&self.observation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub stage: Stage,
    pub system_text: String,
    pub user_text: String,
    /// Same order as the bundle's image slots.
    pub images: Vec<ImagePart>,
    pub limits: GenerationLimits,
}

impl ModelRequest {
    pub fn from_bundle(bundle: &PromptBundle, limits: GenerationLimits) -> Self {
        Self {
            stage: bundle.stage,
            system_text: bundle.system_text.clone(),
            user_text: bundle.user_text.clone(),
            images: bundle
                .images
                .iter()
                .map(|slot| ImagePart {
                    role: slot.role.clone(),
                    media_type: IMAGE_MEDIA_TYPE.to_string(),
                    observation: slot.observation.clone(),
                })
                .collect(),
            limits,
        }
    }

    pub fn has_role(&self, role: &str) -> bool {
        self.images.iter().any(|i| i.role == role)
    }
}

/// What the runner knows about the agent when it makes a call. Scripted
/// backends plan from it; remote backends ignore it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFeed {
    pub pose: Pose,
    pub step: u32,
    /// 1-based; 0 before decomposition.
    pub subgoal_index: usize,
    pub subgoal_count: usize,
    pub subgoal_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryRecord {
    /// 1-based attempt that failed.
    pub attempt: u32,
    pub reason: String,
    pub backoff_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendReply {
    pub text: String,
    pub retries: Vec<RetryRecord>,
}

impl BackendReply {
    pub fn plain(text: String) -> Self {
        Self {
            text,
            retries: Vec::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("transport failure after {} retries: {message}", retries.len())]
    Transport {
        message: String,
        status: Option<u16>,
        retries: Vec<RetryRecord>,
    },
}

pub trait ModelBackend: Send + Sync {
    fn complete(&self, request: &ModelRequest, feed: &AgentFeed) -> Result<BackendReply, BackendError>;

    fn name(&self) -> &str;
}

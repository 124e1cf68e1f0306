use std::io::Read as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::{AgentFeed, BackendError, BackendReply, ModelBackend, ModelRequest, RetryRecord};

pub const ENV_ENDPOINT_URL: &str = "STAGENAV_ENDPOINT_URL";
pub const ENV_API_KEY: &str = "STAGENAV_API_KEY";
pub const ENV_MODEL: &str = "STAGENAV_MODEL";
pub const ENV_TIMEOUT_SECS: &str = "STAGENAV_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: String,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First backoff; doubles per retry.
    pub base_backoff: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            base_backoff: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Reads the four `STAGENAV_*` variables through `lookup`. Endpoint and
    /// key are required.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, BackendError> {
        let required = |k: &str| {
            lookup(k)
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| BackendError::Config(format!("environment variable {k} is not set")))
        };
        let endpoint = required(ENV_ENDPOINT_URL)?;
        let api_key = required(ENV_API_KEY)?;
        let model = lookup(ENV_MODEL).unwrap_or_else(|| "default".to_string());
        let mut cfg = Self::new(endpoint, api_key, model);
        if let Some(raw) = lookup(ENV_TIMEOUT_SECS) {
            let secs: f64 = raw
                .trim()
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite() && *s > 0.0)
                .ok_or_else(|| BackendError::Config(format!("{ENV_TIMEOUT_SECS}={raw:?} is not a positive number")))?;
            cfg.timeout = Duration::from_secs_f64(secs);
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportFailureKind {
    Timeout,
    Connect,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportFailure {
    pub kind: TransportFailureKind,
    pub message: String,
}

/// One HTTP POST. Implementations must not retry on their own.
pub trait Transport: Send + Sync {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportFailure>;
}

pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &str,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportFailure> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let fail = |e: ureq::Error| {
            let kind = match &e {
                ureq::Error::Timeout(_) => TransportFailureKind::Timeout,
                ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
                    TransportFailureKind::Connect
                }
                _ => TransportFailureKind::Other,
            };
            TransportFailure {
                kind,
                message: e.to_string(),
            }
        };
        let mut resp = req.send(body).map_err(fail)?;
        let status = resp.status().as_u16();
        let mut text = String::new();
        resp.body_mut()
            .as_reader()
            .read_to_string(&mut text)
            .map_err(|e| TransportFailure {
                kind: TransportFailureKind::Connect,
                message: e.to_string(),
            })?;
        Ok(HttpResponse { status, body: text })
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct WireMessage {
    role: &'static str,
    content: WireContent,
}

#[derive(Serialize)]
#[serde(untagged)]
enum WireContent {
    Text(String),
    Parts(Vec<WirePart>),
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WirePart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Serialize)]
struct ImageUrl {
    url: String,
}

/// Activity counters, safe to read while requests are in flight.
#[derive(Debug, Default)]
pub struct RemoteCounters {
    pub requests: AtomicU64,
    pub retries: AtomicU64,
    pub failures: AtomicU64,
    pub in_flight: AtomicU64,
    pub peak_in_flight: AtomicU64,
}

struct Limiter {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) {
        let mut free = self.slots.lock().expect("limiter lock");
        while *free == 0 {
            free = self.freed.wait(free).expect("limiter lock");
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.slots.lock().expect("limiter lock") += 1;
        self.freed.notify_one();
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    transport: Box<dyn Transport>,
    limiter: Limiter,
    counters: RemoteCounters,
    name: String,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(String, Option<u16>),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig, transport: Box<dyn Transport>) -> Self {
        let slots = config.max_in_flight.max(1);
        let name = format!("remote({})", config.model);
        Self {
            config,
            transport,
            limiter: Limiter {
                slots: Mutex::new(slots),
                freed: Condvar::new(),
            },
            counters: RemoteCounters::default(),
            name,
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        Ok(Self::new(RemoteConfig::from_env()?, Box::new(UreqTransport)))
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn counters(&self) -> &RemoteCounters {
        &self.counters
    }

    /// The exact JSON body sent for `request`.
    pub fn serialize_request(&self, request: &ModelRequest) -> String {
        serialize_wire(&self.config.model, request)
    }

    fn attempt(&self, body: &str) -> Attempt {
        let headers = vec![
            ("Content-Type".to_string(), "application/json".to_string()),
            (
                "Authorization".to_string(),
                format!("Bearer {}", self.config.api_key),
            ),
        ];
        match self
            .transport
            .post(&self.config.endpoint, &headers, body, self.config.timeout)
        {
            Err(f) => match f.kind {
                TransportFailureKind::Timeout => Attempt::Retry(format!("timeout: {}", f.message)),
                TransportFailureKind::Connect => Attempt::Retry(format!("connection: {}", f.message)),
                TransportFailureKind::Other => Attempt::Fatal(f.message, None),
            },
            Ok(resp) if resp.status == 200 => match parse_wire_response(&resp.body) {
                Ok(text) => Attempt::Done(text),
                Err(msg) => Attempt::Fatal(msg, Some(200)),
            },
            Ok(resp) if resp.status == 408 || resp.status == 429 || resp.status >= 500 => {
                Attempt::Retry(format!("status {}", resp.status))
            }
            Ok(resp) => Attempt::Fatal(
                format!("status {}: {}", resp.status, truncate(&resp.body, 200)),
                Some(resp.status),
            ),
        }
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub(crate) fn serialize_wire(model: &str, request: &ModelRequest) -> String {
    let mut parts = vec![WirePart::Text {
        text: request.user_text.clone(),
    }];
    for image in &request.images {
        parts.push(WirePart::Text {
            text: format!("[{}]", image.role),
        });
        parts.push(WirePart::ImageUrl {
            image_url: ImageUrl {
                url: format!("data:{};base64,{}", image.media_type, image.base64_payload()),
            },
        });
    }
    let wire = WireRequest {
        model,
        messages: vec![
            WireMessage {
                role: "system",
                content: WireContent::Text(request.system_text.clone()),
            },
            WireMessage {
                role: "user",
                content: WireContent::Parts(parts),
            },
        ],
        temperature: request.limits.temperature,
        max_tokens: request.limits.max_output_tokens,
    };
    serde_json::to_string(&wire).expect("wire request serializes")
}

/// First text content of the first choice.
pub(crate) fn parse_wire_response(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or("response has no choices[0].message.content")?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => parts
            .iter()
            .find(|p| p.get("type").and_then(Value::as_str) == Some("text"))
            .and_then(|p| p.get("text").and_then(Value::as_str))
            .map(str::to_string)
            .ok_or_else(|| "response content has no text part".to_string()),
        _ => Err("response content is neither text nor parts".to_string()),
    }
}

impl ModelBackend for RemoteBackend {
    fn complete(&self, request: &ModelRequest, _feed: &AgentFeed) -> Result<BackendReply, BackendError> {
        let body = self.serialize_request(request);
        self.limiter.acquire();
        let now = self.counters.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.counters.peak_in_flight.fetch_max(now, Ordering::SeqCst);

        let mut retries = Vec::new();
        let outcome = loop {
            self.counters.requests.fetch_add(1, Ordering::Relaxed);
            let attempt = retries.len() as u32 + 1;
            match self.attempt(&body) {
                Attempt::Done(text) => break Ok(text),
                Attempt::Fatal(message, status) => break Err((message, status)),
                Attempt::Retry(reason) if retries.len() as u32 >= self.config.max_retries => {
                    break Err((reason, None))
                }
                Attempt::Retry(reason) => {
                    let backoff = self.config.base_backoff * 2u32.pow(retries.len() as u32);
                    retries.push(RetryRecord {
                        attempt,
                        reason,
                        backoff_ms: backoff.as_millis() as u64,
                    });
                    self.counters.retries.fetch_add(1, Ordering::Relaxed);
                    tracing::warn!(attempt, "retrying remote request");
                    std::thread::sleep(backoff);
                }
            }
        };

        self.counters.in_flight.fetch_sub(1, Ordering::SeqCst);
        self.limiter.release();
        match outcome {
            Ok(text) => Ok(BackendReply { text, retries }),
            Err((message, status)) => {
                self.counters.failures.fetch_add(1, Ordering::Relaxed);
                Err(BackendError::Transport {
                    message,
                    status,
                    retries,
                })
            }
        }
    }

    fn name(&self) -> &str {
        &self.name
    }
}

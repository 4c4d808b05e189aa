//! The single seam for chat-completion calls.
//!
//! [`RemoteGateway`] speaks the common `{"messages": [...]}` chat-completion
//! wire format. [`ScriptedStub`] replays canned replies and records every
//! request it receives; all tests run against it.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const API_KEY_ENV: &str = "LLM_API_KEY";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_BACKOFF: Duration = Duration::from_millis(500);
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("{gateway}: request timed out")]
    Timeout { gateway: String },
    #[error("{gateway}: HTTP status {status}")]
    Status { gateway: String, status: u16 },
    #[error("{gateway}: transport error: {message}")]
    Transport { gateway: String, message: String },
    #[error("{gateway}: malformed response: {message}")]
    BadResponse { gateway: String, message: String },
    #[error("scripted stub exhausted after {calls} calls")]
    ScriptExhausted { calls: usize },
    #[error("scripted stub has no reply for request fingerprint {0}")]
    NoScriptedReply(String),
    #[error("LLM unavailable: {0}")]
    Unavailable(String),
}

impl LlmError {
    fn is_transient(&self) -> bool {
        match self {
            LlmError::Timeout { .. } | LlmError::Transport { .. } => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if self.messages.iter().skip(1).any(|m| m.role == Role::System) {
            return Err(LlmError::InvalidRequest(
                "system message allowed only in first position".into(),
            ));
        }
        if self.messages.iter().any(|m| m.content.trim().is_empty()) {
            return Err(LlmError::InvalidRequest("empty message content".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding of the request.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("request serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Content of the last user message, if any.
    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    pub fn system(&self) -> Option<&str> {
        self.messages
            .first()
            .filter(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }
}

pub trait LlmGateway: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

/// Validates then forwards to the gateway.
pub fn complete(gateway: &dyn LlmGateway, request: &CompletionRequest) -> Result<String, LlmError> {
    request.validate()?;
    gateway.complete(request)
}

type Responder = Box<dyn Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync>;

enum Script {
    Sequence(VecDeque<Result<String, String>>),
    Keyed(HashMap<String, String>),
    Responder(Responder),
}

struct StubState {
    script: Script,
    recording: Vec<CompletionRequest>,
}

/// Deterministic stand-in for a chat-completion service.
///
/// Calls are serialized behind a mutex so script order is well defined.
/// Every request is recorded, including ones that end in an error.
pub struct ScriptedStub {
    state: Mutex<StubState>,
}

impl ScriptedStub {
    fn with_script(script: Script) -> Self {
        Self {
            state: Mutex::new(StubState {
                script,
                recording: Vec::new(),
            }),
        }
    }

    /// Replies in order; once exhausted every call fails.
    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_script(Script::Sequence(replies.into_iter().map(|r| Ok(r.into())).collect()))
    }

    /// Like [`sequence`](Self::sequence) but individual steps may fail.
    /// An `Err(message)` step yields [`LlmError::Unavailable`].
    pub fn steps(steps: impl IntoIterator<Item = Result<String, String>>) -> Self {
        Self::with_script(Script::Sequence(steps.into_iter().collect()))
    }

    /// Replies looked up by [`CompletionRequest::fingerprint`].
    pub fn keyed(map: HashMap<String, String>) -> Self {
        Self::with_script(Script::Keyed(map))
    }

    /// Replies computed from the request.
    pub fn responder(
        f: impl Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync + 'static,
    ) -> Self {
        Self::with_script(Script::Responder(Box::new(f)))
    }

    /// A gateway that always fails, for exercising fallbacks.
    pub fn unavailable() -> Self {
        Self::sequence(Vec::<String>::new())
    }

    /// Echoes the full request back as text.
    pub fn echo() -> Self {
        Self::responder(|req| {
            Ok(req
                .messages
                .iter()
                .map(|m| m.content.as_str())
                .collect::<Vec<_>>()
                .join("\n"))
        })
    }

    pub fn recording(&self) -> Vec<CompletionRequest> {
        self.state.lock().expect("stub lock").recording.clone()
    }

    pub fn calls(&self) -> usize {
        self.state.lock().expect("stub lock").recording.len()
    }
}

impl LlmGateway for ScriptedStub {
    fn name(&self) -> &str {
        "scripted-stub"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let mut state = self.state.lock().expect("stub lock");
        state.recording.push(request.clone());
        let calls = state.recording.len();
        match &mut state.script {
            Script::Sequence(queue) => match queue.pop_front() {
                Some(Ok(reply)) => Ok(reply),
                Some(Err(message)) => Err(LlmError::Unavailable(message)),
                None => Err(LlmError::ScriptExhausted { calls: calls - 1 }),
            },
            Script::Keyed(map) => {
                let fp = request.fingerprint();
                map.get(&fp).cloned().ok_or(LlmError::NoScriptedReply(fp))
            }
            Script::Responder(f) => f(request),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSettings {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_secs() -> u64 {
    DEFAULT_TIMEOUT.as_secs()
}

fn default_retries() -> u32 {
    1
}

fn default_backoff_ms() -> u64 {
    DEFAULT_BACKOFF.as_millis() as u64
}

/// HTTP chat-completion client with a timeout and retries on transient
/// failures (timeouts, transport errors, 429 and 5xx). Backoff doubles after
/// each attempt.
pub struct RemoteGateway {
    settings: RemoteSettings,
    api_key: Option<String>,
    agent: ureq::Agent,
    name: String,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

impl RemoteGateway {
    /// Reads the API key from `LLM_API_KEY` when set.
    pub fn new(settings: RemoteSettings) -> Self {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_key(settings, api_key)
    }

    pub fn with_key(settings: RemoteSettings, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let name = format!("remote:{}", settings.model);
        Self {
            settings,
            api_key,
            agent,
            name,
        }
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let body = WireRequest {
            model: &self.settings.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut call = self.agent.post(&self.settings.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout {
                gateway: self.name.clone(),
            },
            other => LlmError::Transport {
                gateway: self.name.clone(),
                message: other.to_string(),
            },
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(LlmError::Status {
                gateway: self.name.clone(),
                status,
            });
        }
        let parsed: WireResponse = resp.body_mut().read_json().map_err(|e| LlmError::BadResponse {
            gateway: self.name.clone(),
            message: e.to_string(),
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::BadResponse {
                gateway: self.name.clone(),
                message: "no choices".into(),
            })
    }
}

impl LlmGateway for RemoteGateway {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let mut backoff = Duration::from_millis(self.settings.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Err(e) if e.is_transient() && attempt < self.settings.retries => {
                    attempt += 1;
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                other => return other,
            }
        }
    }
}

/// Gateway selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GatewaySettings {
    /// Deterministic canned replies; see [`offline_reply`].
    Offline,
    Remote(RemoteSettings),
}

impl Default for GatewaySettings {
    fn default() -> Self {
        GatewaySettings::Offline
    }
}

impl GatewaySettings {
    pub fn build(&self) -> std::sync::Arc<dyn LlmGateway> {
        match self {
            GatewaySettings::Offline => std::sync::Arc::new(ScriptedStub::responder(offline_reply)),
            GatewaySettings::Remote(settings) => std::sync::Arc::new(RemoteGateway::new(settings.clone())),
        }
    }
}

/// Canned behavior for running the service end to end without a model.
///
/// Follow-up and topic prompts (recognized by their system block) get
/// questions lifted from the bulleted context, or generic questions when
/// there is none. Answer prompts get the first reference answer.
pub fn offline_reply(request: &CompletionRequest) -> Result<String, LlmError> {
    let system = request.system().unwrap_or_default();
    let user = request.last_user().unwrap_or_default();
    if system.contains("follow-up questions") {
        let mut out: Vec<&str> = Vec::new();
        for line in user.lines() {
            if let Some(q) = line.strip_prefix("- ") {
                let q = q.trim();
                if q.ends_with('?') && !out.contains(&q) {
                    out.push(q);
                }
            }
            if out.len() == 4 {
                break;
            }
        }
        if out.is_empty() {
            return Ok([
                "What are the early warning signs I should watch for?",
                "How often should I be screened?",
                "What lifestyle changes lower my risk?",
                "When should I see a doctor about this?",
            ]
            .join("\n"));
        }
        return Ok(out.join("\n"));
    }
    if system.contains("Reply with the category name only") || system.contains("Reply with the topic name only") {
        return Ok("unknown".to_string());
    }
    let answer = user
        .lines()
        .find_map(|l| l.strip_prefix("A: "))
        .unwrap_or("I can answer questions about colorectal cancer. Please consult a doctor for personal advice.");
    Ok(answer.to_string())
}

//! Chat sessions and the engine behind each interaction: grounded answers,
//! terminology explanations, topic switching and follow-up refresh.
//!
//! Operations on one session are serialized by [`SessionStore`]: a second
//! concurrent request for the same session is rejected with
//! [`ChatError::Busy`] rather than queued.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, TryLockError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QAPair;
use crate::embedding::EmbeddingProvider;
use crate::followup::{self, FollowupEngine, FollowupError, FollowupMethod, FollowupSet, MAX_FOLLOWUPS};
use crate::llm::{self, ChatMessage, CompletionRequest, LlmError, LlmGateway};
use crate::peer_examples::{self, ExampleError, ExampleLibrary, ServedExample};
use crate::retrieval::{DocIndex, RetrievalError, DEFAULT_TOP_K};
use crate::template;
use crate::topics::{self, SwitchTaxonomy};

pub const DEFAULT_SYSTEM_PROMPT: &str = include_str!("../templates/system.txt");
pub const DEFAULT_EXPLAIN_TEMPLATE: &str = include_str!("../templates/explain.txt");
pub const DEFAULT_GREETING: &str = include_str!("../templates/greeting.txt");
pub const DEFAULT_TOPIC_SWITCH_TEMPLATE: &str = include_str!("../templates/topic_switch.txt");
pub const MAX_SELECTION_CHARS: usize = 200;

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("selection is empty")]
    EmptySelection,
    #[error("selection is {len} characters, limit is {max}")]
    SelectionTooLong { len: usize, max: usize },
    #[error("unknown topic `{name}`; valid topics: {}", valid.join(", "))]
    UnknownTopic { name: String, valid: Vec<String> },
    #[error("no query yet")]
    NoQuery,
    #[error("no completed exchange yet")]
    NoExchange,
    #[error("LLM returned an empty reply")]
    EmptyReply,
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("session `{0}` is busy with another request")]
    Busy(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Followup(#[from] FollowupError),
    #[error(transparent)]
    Example(#[from] ExampleError),
    #[error("session log {path}: {message}")]
    Persistence { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryTurn {
    pub role: Role,
    pub text: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSession {
    pub session_id: String,
    history: Vec<HistoryTurn>,
    pub current_followups: Option<FollowupSet>,
    pub active_topic: Option<String>,
}

impl ChatSession {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            history: Vec::new(),
            current_followups: None,
            active_topic: None,
        }
    }

    pub fn history(&self) -> &[HistoryTurn] {
        &self.history
    }

    /// Appends a turn. History is never rewritten.
    pub fn push(&mut self, role: Role, text: impl Into<String>, timestamp: i64) {
        self.history.push(HistoryTurn {
            role,
            text: text.into(),
            timestamp,
        });
    }

    pub fn latest_query(&self) -> Option<&str> {
        self.history
            .iter()
            .rev()
            .find(|t| t.role == Role::User)
            .map(|t| t.text.as_str())
    }

    fn latest_exchange_start(&self) -> Option<usize> {
        let n = self.history.len();
        (n >= 2 && self.history[n - 1].role == Role::Agent && self.history[n - 2].role == Role::User)
            .then(|| n - 2)
    }

    /// The last user query together with the agent reply that followed it.
    pub fn latest_exchange(&self) -> Option<(&str, &str)> {
        self.latest_exchange_start()
            .map(|i| (self.history[i].text.as_str(), self.history[i + 1].text.as_str()))
    }

    /// Full transcript as `User:` / `Agent:` lines.
    pub fn transcript_text(&self) -> String {
        render_turns(&self.history)
    }

    /// Transcript excluding the latest exchange.
    pub fn transcript_before_latest_exchange(&self) -> String {
        let end = self.latest_exchange_start().unwrap_or(self.history.len());
        render_turns(&self.history[..end])
    }
}

fn render_turns(turns: &[HistoryTurn]) -> String {
    if turns.is_empty() {
        return "(no earlier messages)".to_string();
    }
    turns
        .iter()
        .map(|t| match t.role {
            Role::User => format!("User: {}", t.text),
            Role::Agent => format!("Agent: {}", t.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub trait Clock: Send + Sync {
    /// Seconds since the Unix epoch.
    fn now(&self) -> i64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    }
}

/// Starts at a fixed instant and advances one second per reading.
pub struct StepClock(AtomicU64);

impl StepClock {
    pub fn new(start: u64) -> Self {
        Self(AtomicU64::new(start))
    }
}

impl Clock for StepClock {
    fn now(&self) -> i64 {
        self.0.fetch_add(1, Ordering::SeqCst) as i64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedQa {
    pub id: String,
    pub question: String,
    pub answer: String,
}

/// The grounded prompt sent for one user query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedPrompt {
    pub system_block: String,
    pub retrieved_block: Vec<RetrievedQa>,
    pub history_block: Vec<ChatMessage>,
    pub query_block: String,
}

impl EnrichedPrompt {
    /// System prompt, prior turns as chat messages, then one user message
    /// carrying the reference QA pairs and the query.
    pub fn to_request(&self) -> CompletionRequest {
        let mut messages = Vec::with_capacity(self.history_block.len() + 2);
        messages.push(ChatMessage::system(self.system_block.clone()));
        messages.extend(self.history_block.iter().cloned());
        messages.push(ChatMessage::user(render_query_message(&self.retrieved_block, &self.query_block)));
        CompletionRequest::new(messages)
    }
}

fn render_query_message(retrieved: &[RetrievedQa], query: &str) -> String {
    let mut out = String::from("Reference QA pairs:\n");
    for (i, qa) in retrieved.iter().enumerate() {
        out.push_str(&format!("\n[{}]\nQ: {}\nA: {}\n", i + 1, qa.question, qa.answer));
    }
    out.push_str("\nQuestion:\n");
    out.push_str(query);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    pub top_k: usize,
    pub system_prompt: String,
    pub explain_template: String,
    pub greeting: String,
    pub topic_switch_template: String,
    pub followup_method: FollowupMethod,
    /// Most recent turns sent to the LLM; `None` sends everything.
    pub max_history_turns: Option<usize>,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            system_prompt: DEFAULT_SYSTEM_PROMPT.trim_end().to_string(),
            explain_template: DEFAULT_EXPLAIN_TEMPLATE.trim_end().to_string(),
            greeting: DEFAULT_GREETING.trim_end().to_string(),
            topic_switch_template: DEFAULT_TOPIC_SWITCH_TEMPLATE.to_string(),
            followup_method: FollowupMethod::TopicLlm,
            max_history_turns: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RespondOutcome {
    pub reply: String,
    pub prompt: EnrichedPrompt,
    pub followups: Option<FollowupSet>,
    /// Set when the answer succeeded but follow-up refresh failed; the
    /// previous follow-ups stay in place.
    pub followup_error: Option<String>,
}

/// Shared, immutable resources plus the operations over a session.
pub struct ChatEngine {
    pub config: ChatConfig,
    pub provider: Arc<dyn EmbeddingProvider>,
    /// Base and disease-lookup QA pairs.
    pub qa_index: Arc<DocIndex>,
    pub base_qa: Arc<Vec<QAPair>>,
    pub followups: FollowupEngine,
    pub examples: Arc<ExampleLibrary>,
    pub taxonomy: SwitchTaxonomy,
    pub llm: Arc<dyn LlmGateway>,
    pub clock: Arc<dyn Clock>,
}

impl ChatEngine {
    /// New session with the greeting and initial suggestions taken from the
    /// first base questions.
    pub fn start_session(&self, session_id: impl Into<String>) -> ChatSession {
        let mut session = ChatSession::new(session_id);
        session.push(Role::Agent, self.config.greeting.clone(), self.clock.now());
        let mut questions: Vec<String> = Vec::new();
        let mut ids = Vec::new();
        for qa in self.base_qa.iter() {
            if questions.len() == MAX_FOLLOWUPS {
                break;
            }
            if !questions.contains(&qa.question) {
                questions.push(qa.question.clone());
                ids.push(qa.id.clone());
            }
        }
        session.current_followups = FollowupSet::new(questions, self.config.followup_method, ids).ok();
        session
    }

    /// Builds the grounded prompt for `query` against the session so far.
    pub fn enriched_prompt(&self, session: &ChatSession, query: &str) -> Result<EnrichedPrompt, ChatError> {
        let hits = self.qa_index.top_k(query, self.config.top_k, &*self.provider)?;
        let retrieved_block = hits
            .iter()
            .filter_map(|h| self.qa_index.get(&h.doc_id))
            .map(|d| RetrievedQa {
                id: d.id.clone(),
                question: d.text.clone(),
                answer: d.payload.clone().unwrap_or_default(),
            })
            .collect();
        let turns = session.history();
        let start = match self.config.max_history_turns {
            Some(max) => turns.len().saturating_sub(max),
            None => 0,
        };
        let history_block = turns[start..]
            .iter()
            .map(|t| match t.role {
                Role::User => ChatMessage::user(t.text.clone()),
                Role::Agent => ChatMessage::assistant(t.text.clone()),
            })
            .collect();
        Ok(EnrichedPrompt {
            system_block: self.config.system_prompt.clone(),
            retrieved_block,
            history_block,
            query_block: query.to_string(),
        })
    }

    /// Answers `query` grounded in the top retrieved QA pairs, then refreshes
    /// follow-ups. On LLM or retrieval failure the session is untouched.
    pub fn respond(
        &self,
        session: &mut ChatSession,
        query: &str,
        method: Option<FollowupMethod>,
    ) -> Result<RespondOutcome, ChatError> {
        let query = query.trim();
        if query.is_empty() {
            return Err(ChatError::EmptyQuery);
        }
        let prompt = self.enriched_prompt(session, query)?;
        let reply = llm::complete(&*self.llm, &prompt.to_request())?;
        let reply = reply.trim();
        if reply.is_empty() {
            return Err(ChatError::EmptyReply);
        }
        session.push(Role::User, query, self.clock.now());
        session.push(Role::Agent, reply, self.clock.now());

        let method = method.unwrap_or(self.config.followup_method);
        let (followups, followup_error) = match self.followups.suggest(session, method, &*self.llm) {
            Ok(set) => {
                session.current_followups = Some(set.clone());
                (Some(set), None)
            }
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(RespondOutcome {
            reply: reply.to_string(),
            prompt,
            followups,
            followup_error,
        })
    }

    /// The explanation query for a selected term.
    pub fn explain_query(&self, selected: &str) -> Result<String, ChatError> {
        let selected = selected.trim();
        if selected.is_empty() {
            return Err(ChatError::EmptySelection);
        }
        let len = selected.chars().count();
        if len > MAX_SELECTION_CHARS {
            return Err(ChatError::SelectionTooLong {
                len,
                max: MAX_SELECTION_CHARS,
            });
        }
        Ok(template::render(&self.config.explain_template, &[("selected", selected)]))
    }

    pub fn explain_term(
        &self,
        session: &mut ChatSession,
        selected: &str,
        method: Option<FollowupMethod>,
    ) -> Result<RespondOutcome, ChatError> {
        let query = self.explain_query(selected)?;
        self.respond(session, &query, method)
    }

    /// Switches the active topic and replaces the follow-ups with questions
    /// about it. On failure nothing changes.
    pub fn switch_topic(&self, session: &mut ChatSession, topic_name: &str) -> Result<FollowupSet, ChatError> {
        if !self.taxonomy.contains(topic_name) {
            return Err(ChatError::UnknownTopic {
                name: topic_name.to_string(),
                valid: self.taxonomy.names().map(str::to_string).collect(),
            });
        }
        let prompt = template::render(
            &self.config.topic_switch_template,
            &[("topic", topic_name), ("history", &session.transcript_text())],
        );
        let request = CompletionRequest::new(vec![
            ChatMessage::system(followup::FOLLOWUP_SYSTEM),
            ChatMessage::user(prompt),
        ]);
        let reply = llm::complete(&*self.llm, &request)?;
        let questions = followup::parse_questions(&reply);
        if questions.is_empty() {
            return Err(ChatError::EmptyReply);
        }
        let set = FollowupSet::new(questions, FollowupMethod::LlmOnly, Vec::new())?;
        session.active_topic = Some(topic_name.to_string());
        session.current_followups = Some(set.clone());
        Ok(set)
    }

    /// Topic-menu preselection for the latest query.
    pub fn current_topic(&self, session: &ChatSession) -> Result<String, ChatError> {
        let query = session.latest_query().ok_or(ChatError::NoQuery)?;
        Ok(topics::classify_switch_topic(query, session, &*self.llm, &self.taxonomy))
    }

    /// A curated community post matching the latest exchange.
    pub fn example(&self, session: &ChatSession) -> Result<ServedExample, ChatError> {
        let (query, response) = session.latest_exchange().ok_or(ChatError::NoExchange)?;
        Ok(peer_examples::fetch_example(
            query,
            response,
            &self.examples,
            &*self.llm,
            &*self.provider,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum SessionEvent {
    Created { session_id: String },
    Turn(HistoryTurn),
    Followups { set: Option<FollowupSet> },
    Topic { name: Option<String> },
}

fn diff_events(before: &ChatSession, after: &ChatSession) -> Vec<SessionEvent> {
    let mut events: Vec<SessionEvent> = after.history[before.history.len()..]
        .iter()
        .cloned()
        .map(SessionEvent::Turn)
        .collect();
    if before.current_followups != after.current_followups {
        events.push(SessionEvent::Followups {
            set: after.current_followups.clone(),
        });
    }
    if before.active_topic != after.active_topic {
        events.push(SessionEvent::Topic {
            name: after.active_topic.clone(),
        });
    }
    events
}

/// In-memory sessions, optionally backed by one append-only JSON Lines event
/// log per session.
pub struct SessionStore {
    sessions: Mutex<HashMap<String, Arc<Mutex<ChatSession>>>>,
    log_dir: Option<PathBuf>,
    next_id: AtomicU64,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            log_dir: None,
            next_id: AtomicU64::new(1),
        }
    }

    /// Opens `dir`, replaying every session log found there.
    pub fn open(dir: &Path) -> Result<Self, ChatError> {
        let persist = |message: String| ChatError::Persistence {
            path: dir.to_path_buf(),
            message,
        };
        std::fs::create_dir_all(dir).map_err(|e| persist(e.to_string()))?;
        let mut sessions = HashMap::new();
        let mut max_seq = 0;
        let entries = std::fs::read_dir(dir).map_err(|e| persist(e.to_string()))?;
        for entry in entries {
            let path = entry.map_err(|e| persist(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            let session = replay(&path)?;
            if let Some(seq) = session.session_id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                max_seq = max_seq.max(seq);
            }
            sessions.insert(session.session_id.clone(), Arc::new(Mutex::new(session)));
        }
        Ok(Self {
            sessions: Mutex::new(sessions),
            log_dir: Some(dir.to_path_buf()),
            next_id: AtomicU64::new(max_seq + 1),
        })
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.log_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn append(&self, id: &str, events: &[SessionEvent]) -> Result<(), ChatError> {
        let Some(path) = self.log_path(id) else {
            return Ok(());
        };
        let persist = |message: String| ChatError::Persistence {
            path: path.clone(),
            message,
        };
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| persist(e.to_string()))?;
        for event in events {
            let line = serde_json::to_string(event).map_err(|e| persist(e.to_string()))?;
            writeln!(file, "{line}").map_err(|e| persist(e.to_string()))?;
        }
        Ok(())
    }

    /// Creates and registers a session via `engine`.
    pub fn create(&self, engine: &ChatEngine) -> Result<ChatSession, ChatError> {
        let id = format!("s{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let session = engine.start_session(id.clone());
        let mut events = vec![SessionEvent::Created {
            session_id: id.clone(),
        }];
        events.extend(diff_events(&ChatSession::new(id.clone()), &session));
        self.append(&id, &events)?;
        self.sessions
            .lock()
            .expect("store lock")
            .insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Result<ChatSession, ChatError> {
        let handle = self.handle(id)?;
        let guard = handle.lock().unwrap_or_else(|p| p.into_inner());
        Ok(guard.clone())
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<ChatSession>>, ChatError> {
        self.sessions
            .lock()
            .expect("store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ChatError::NotFound(id.to_string()))
    }

    /// Runs `f` with exclusive access to the session, failing fast with
    /// [`ChatError::Busy`] if another operation holds it. Changes are logged
    /// before the lock is released.
    pub fn with_session<R>(
        &self,
        id: &str,
        f: impl FnOnce(&mut ChatSession) -> Result<R, ChatError>,
    ) -> Result<R, ChatError> {
        let handle = self.handle(id)?;
        let mut guard = match handle.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(ChatError::Busy(id.to_string())),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let before = guard.clone();
        let result = f(&mut guard);
        self.append(id, &diff_events(&before, &guard))?;
        result
    }
}

fn replay(path: &Path) -> Result<ChatSession, ChatError> {
    let persist = |message: String| ChatError::Persistence {
        path: path.to_path_buf(),
        message,
    };
    File::open(path).map_err(|e| persist(e.to_string()))?;
    let lines = crate::jsonl::read_lines(path).map_err(|e| persist(e.to_string()))?;
    let mut session: Option<ChatSession> = None;
    for (line, text) in lines {
        let event: SessionEvent =
            serde_json::from_str(&text).map_err(|e| persist(format!("line {line}: {e}")))?;
        match (event, session.as_mut()) {
            (SessionEvent::Created { session_id }, None) => session = Some(ChatSession::new(session_id)),
            (SessionEvent::Turn(turn), Some(s)) => s.history.push(turn),
            (SessionEvent::Followups { set }, Some(s)) => s.current_followups = set,
            (SessionEvent::Topic { name }, Some(s)) => s.active_topic = name,
            _ => return Err(persist(format!("line {line}: unexpected event order"))),
        }
    }
    session.ok_or_else(|| persist("empty log".into()))
}

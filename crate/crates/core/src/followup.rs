//! Suggested follow-up questions.
//!
//! Four interchangeable methods are available:
//!
//! * `topic_llm`: assign the latest query to a conversation topic (with
//!   outlier detection), put the ten closest in-topic patient questions in the
//!   prompt, and let the LLM write the follow-ups.
//! * `kmeans_llm`: the same, over a plain k-means model without outliers.
//! * `llm_only`: the LLM sees only the conversation.
//! * `retrieval_based`: no LLM; disease-lookup questions tagged with a disease
//!   named in the query, ranked by similarity.

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::ChatSession;
use crate::corpus::QAPair;
use crate::embedding::EmbeddingProvider;
use crate::llm::{self, ChatMessage, CompletionRequest, LlmError, LlmGateway};
use crate::retrieval::{DocIndex, RetrievalError};
use crate::template;
use crate::topics::{TopicError, TopicSource, DEFAULT_IN_TOPIC_DOCS, OUTLIER};

pub const MAX_FOLLOWUPS: usize = 4;
pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/followup.txt");
pub(crate) const FOLLOWUP_SYSTEM: &str =
    "You write follow-up questions for a patient talking with a colorectal-cancer health assistant.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowupMethod {
    TopicLlm,
    KmeansLlm,
    LlmOnly,
    RetrievalBased,
}

impl FollowupMethod {
    pub const ALL: [FollowupMethod; 4] = [
        FollowupMethod::TopicLlm,
        FollowupMethod::KmeansLlm,
        FollowupMethod::LlmOnly,
        FollowupMethod::RetrievalBased,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FollowupMethod::TopicLlm => "topic_llm",
            FollowupMethod::KmeansLlm => "kmeans_llm",
            FollowupMethod::LlmOnly => "llm_only",
            FollowupMethod::RetrievalBased => "retrieval_based",
        }
    }
}

impl std::fmt::Display for FollowupMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FollowupMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FollowupMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown follow-up method `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum FollowupError {
    #[error("session has no completed exchange yet")]
    NoExchange,
    #[error("{method}: LLM call failed: {source}")]
    Llm {
        method: FollowupMethod,
        #[source]
        source: LlmError,
    },
    #[error("{method}: LLM reply contained no questions")]
    EmptyReply { method: FollowupMethod },
    #[error("no disease-lookup questions available")]
    NoCandidates,
    #[error("invalid follow-up set: {0}")]
    InvalidSet(String),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// One to four distinct follow-up questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowupSet {
    pub questions: Vec<String>,
    pub method: FollowupMethod,
    pub context_doc_ids: Vec<String>,
}

impl FollowupSet {
    pub fn new(
        questions: Vec<String>,
        method: FollowupMethod,
        context_doc_ids: Vec<String>,
    ) -> Result<Self, FollowupError> {
        if questions.is_empty() || questions.len() > MAX_FOLLOWUPS {
            return Err(FollowupError::InvalidSet(format!(
                "expected 1 to {MAX_FOLLOWUPS} questions, got {}",
                questions.len()
            )));
        }
        let mut seen = HashSet::new();
        for q in &questions {
            let t = q.trim();
            if t.is_empty() || !seen.insert(t) {
                return Err(FollowupError::InvalidSet(format!("empty or repeated question {q:?}")));
            }
        }
        Ok(Self {
            questions,
            method,
            context_doc_ids,
        })
    }
}

/// Splits an LLM reply into questions: one per line, list markers removed,
/// blanks and repeats dropped, at most four kept.
pub fn parse_questions(reply: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in reply.lines() {
        let q = strip_marker(line.trim()).trim();
        if q.is_empty() || out.iter().any(|seen| seen == q) {
            continue;
        }
        out.push(q.to_string());
        if out.len() == MAX_FOLLOWUPS {
            break;
        }
    }
    out
}

fn strip_marker(line: &str) -> &str {
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return rest;
        }
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return rest;
        }
    }
    line
}

/// Renders the follow-up prompt: instructions, history, latest query, latest
/// answer, then the topic questions as a bulleted block (omitted when there
/// are none).
pub fn render_followup_prompt(template: &str, session: &ChatSession, topic_questions: &[String]) -> String {
    let (query, answer) = session.latest_exchange().unwrap_or(("", ""));
    let history = session.transcript_before_latest_exchange();
    let block = if topic_questions.is_empty() {
        String::new()
    } else {
        let mut b = String::from("\nQuestions other patients asked on this topic:\n");
        for q in topic_questions {
            b.push_str("- ");
            b.push_str(q);
            b.push('\n');
        }
        b
    };
    template::render(
        template,
        &[
            ("history", &history),
            ("query", query),
            ("answer", answer),
            ("topic_questions", &block),
        ],
    )
}

/// Everything the four methods draw on.
pub struct FollowupEngine {
    pub provider: Arc<dyn EmbeddingProvider>,
    /// Model with outlier detection, used by `topic_llm`.
    pub topic_model: Arc<dyn TopicSource>,
    /// Outlier-free model, used by `kmeans_llm`.
    pub kmeans_model: Arc<dyn TopicSource>,
    /// Conversation questions, ids matching the topic models' assignments.
    pub conv_index: Arc<DocIndex>,
    pub lookup_qa: Arc<Vec<QAPair>>,
    /// Lookup questions, ids matching `lookup_qa`.
    pub lookup_index: Arc<DocIndex>,
    pub template: String,
    pub in_topic_docs: usize,
}

impl FollowupEngine {
    pub fn new(
        provider: Arc<dyn EmbeddingProvider>,
        topic_model: Arc<dyn TopicSource>,
        kmeans_model: Arc<dyn TopicSource>,
        conv_index: Arc<DocIndex>,
        lookup_qa: Arc<Vec<QAPair>>,
        lookup_index: Arc<DocIndex>,
    ) -> Self {
        Self {
            provider,
            topic_model,
            kmeans_model,
            conv_index,
            lookup_qa,
            lookup_index,
            template: DEFAULT_TEMPLATE.to_string(),
            in_topic_docs: DEFAULT_IN_TOPIC_DOCS,
        }
    }

    pub fn suggest(
        &self,
        session: &ChatSession,
        method: FollowupMethod,
        llm: &dyn LlmGateway,
    ) -> Result<FollowupSet, FollowupError> {
        let (query, _) = session.latest_exchange().ok_or(FollowupError::NoExchange)?;
        match method {
            FollowupMethod::TopicLlm => self.topic_guided(session, query, &*self.topic_model, method, llm),
            FollowupMethod::KmeansLlm => self.topic_guided(session, query, &*self.kmeans_model, method, llm),
            FollowupMethod::LlmOnly => self.generate(session, &[], Vec::new(), method, llm),
            FollowupMethod::RetrievalBased => self.from_lookup(query),
        }
    }

    fn topic_guided(
        &self,
        session: &ChatSession,
        query: &str,
        model: &dyn TopicSource,
        method: FollowupMethod,
        llm: &dyn LlmGateway,
    ) -> Result<FollowupSet, FollowupError> {
        let topic = model.assign_topic(query, &*self.provider)?;
        if topic == OUTLIER {
            return self.generate(session, &[], Vec::new(), method, llm);
        }
        let hits = model.in_topic_docs(topic, query, self.in_topic_docs, &self.conv_index, &*self.provider)?;
        let mut questions = Vec::with_capacity(hits.len());
        let mut ids = Vec::with_capacity(hits.len());
        for hit in hits {
            if let Some(doc) = self.conv_index.get(&hit.doc_id) {
                questions.push(doc.text.clone());
                ids.push(hit.doc_id);
            }
        }
        self.generate(session, &questions, ids, method, llm)
    }

    fn generate(
        &self,
        session: &ChatSession,
        topic_questions: &[String],
        context_doc_ids: Vec<String>,
        method: FollowupMethod,
        llm: &dyn LlmGateway,
    ) -> Result<FollowupSet, FollowupError> {
        let prompt = render_followup_prompt(&self.template, session, topic_questions);
        let request = CompletionRequest::new(vec![ChatMessage::system(FOLLOWUP_SYSTEM), ChatMessage::user(prompt)]);
        let reply = llm::complete(llm, &request).map_err(|source| FollowupError::Llm { method, source })?;
        let questions = parse_questions(&reply);
        if questions.is_empty() {
            return Err(FollowupError::EmptyReply { method });
        }
        FollowupSet::new(questions, method, context_doc_ids)
    }

    /// Lookup questions sharing a disease tag with the query, best cosine
    /// first. With no tag match, the best four over the whole lookup corpus.
    fn from_lookup(&self, query: &str) -> Result<FollowupSet, FollowupError> {
        let detected = detect_diseases(query, &self.lookup_qa);
        let tagged: HashSet<&str> = self
            .lookup_qa
            .iter()
            .filter(|qa| qa.disease_tags.iter().any(|t| detected.contains(&t.to_lowercase())))
            .map(|qa| qa.id.as_str())
            .collect();
        let known: HashSet<&str> = self.lookup_qa.iter().map(|qa| qa.id.as_str()).collect();
        let qvec = self.lookup_index.embed_query(query, &*self.provider)?;
        let pool = if tagged.is_empty() { &known } else { &tagged };
        let ranked = self
            .lookup_index
            .top_k_by_vector(&qvec, self.lookup_index.len(), |d| pool.contains(d.id.as_str()))?;
        let mut questions: Vec<String> = Vec::new();
        let mut ids = Vec::new();
        for hit in ranked {
            let text = self.lookup_index.get(&hit.doc_id).map(|d| d.text.trim()).unwrap_or_default();
            if text.is_empty() || questions.iter().any(|q| q == text) {
                continue;
            }
            questions.push(text.to_string());
            ids.push(hit.doc_id);
            if questions.len() == MAX_FOLLOWUPS {
                break;
            }
        }
        if questions.is_empty() {
            return Err(FollowupError::NoCandidates);
        }
        FollowupSet::new(questions, FollowupMethod::RetrievalBased, ids)
    }
}

/// Lowercased disease tags from the corpus vocabulary that occur in `query`.
pub fn detect_diseases(query: &str, corpus: &[QAPair]) -> HashSet<String> {
    let lower = query.to_lowercase();
    corpus
        .iter()
        .flat_map(|qa| qa.disease_tags.iter())
        .map(|t| t.to_lowercase())
        .filter(|t| !t.is_empty() && lower.contains(t.as_str()))
        .collect()
}

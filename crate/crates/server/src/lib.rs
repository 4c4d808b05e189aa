//! JSON-over-HTTP API for the chat engine.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/sessions` | none | 201 `{session_id, greeting, suggestions}` |
//! | POST | `/sessions/{id}/messages` | `{text, method?}` | [`MessageResponse`] |
//! | GET | `/autocomplete?q=` | none | `{suggestions: [{question, doc_id}]}` |
//! | GET | `/sessions/{id}/topic` | none | `{active_topic, detected_topic, topics}` |
//! | POST | `/sessions/{id}/topic` | `{topic}` | `{active_topic, followups}` |
//! | POST | `/sessions/{id}/example` | none | served post with `disclaimer` |
//! | POST | `/sessions/{id}/explain` | `{selected, method?}` | [`MessageResponse`] |
//! | GET | `/healthz` | none | `{status, sessions}` |
//!
//! Errors are `{code, message}` with 400 (invalid input), 404 (unknown
//! session), 409 (session busy or no exchange yet), 502 (LLM failure) or
//! 500.

mod config;
mod error;

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use healthchat_core::artifacts::{self, ArtifactError};
use healthchat_core::autocomplete::PrefixIndex;
use healthchat_core::chat::{ChatEngine, ChatError, ChatSession, Role, SessionStore, SystemClock};
use healthchat_core::followup::{FollowupMethod, FollowupSet};
use healthchat_core::peer_examples::ServedExample;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

pub use config::ServerConfig;
pub use error::{ApiError, ServerError};

/// Shared state: the immutable engine and indexes plus the session store.
pub struct AppState {
    pub engine: ChatEngine,
    pub store: SessionStore,
    pub autocomplete: PrefixIndex,
    pub autocomplete_cap: usize,
}

impl AppState {
    /// Loads everything named by `config`, failing on missing or stale
    /// snapshots.
    pub fn load(config: &ServerConfig) -> Result<Self, ServerError> {
        config.validate()?;
        let layout = config.layout();
        let loaded = artifacts::load_engine(&layout, &config.engine, config.llm.build(), Arc::new(SystemClock))?;
        check_category_cap(&loaded.engine, config.per_category_cap)?;
        let store = if config.persist_sessions {
            SessionStore::open(&layout.sessions_dir())?
        } else {
            SessionStore::in_memory()
        };
        Ok(Self {
            engine: loaded.engine,
            store,
            autocomplete: loaded.autocomplete,
            autocomplete_cap: config.autocomplete_cap,
        })
    }
}

fn check_category_cap(engine: &ChatEngine, cap: usize) -> Result<(), ServerError> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in engine.examples.index().docs() {
        if let Some(post) = engine.examples.post(&doc.id) {
            *counts.entry(post.category.as_str()).or_default() += 1;
        }
    }
    match counts.into_iter().find(|(_, n)| *n > cap) {
        Some((category, n)) => Err(ServerError::Config(format!(
            "curated snapshot serves {n} posts in `{category}`, above the per-category cap of {cap}"
        ))),
        None => Ok(()),
    }
}

impl From<ArtifactError> for ServerError {
    fn from(e: ArtifactError) -> Self {
        ServerError::Startup(e)
    }
}

pub fn router(state: Arc<AppState>, config: &ServerConfig) -> Router {
    let cors = if config.cors_origins.is_empty() {
        CorsLayer::permissive()
    } else {
        let origins: Vec<HeaderValue> = config.cors_origins.iter().filter_map(|o| o.parse().ok()).collect();
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(origins))
            .allow_methods(tower_http::cors::Any)
            .allow_headers(tower_http::cors::Any)
    };
    let api = api_routes(state).layer(cors);
    match config.static_path() {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// The API routes without CORS or static files.
pub fn api_routes(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/messages", post(send_message))
        .route("/sessions/{id}/topic", get(get_topic).post(switch_topic))
        .route("/sessions/{id}/example", post(example))
        .route("/sessions/{id}/explain", post(explain))
        .route("/autocomplete", get(autocomplete))
        .with_state(state)
}

/// Loads the state, binds and serves until the process is stopped.
pub async fn serve(config: ServerConfig) -> Result<(), ServerError> {
    let state = tokio::task::spawn_blocking({
        let config = config.clone();
        move || AppState::load(&config)
    })
    .await
    .map_err(|e| ServerError::Config(e.to_string()))??;
    let app = router(Arc::new(state), &config);
    let listener = tokio::net::TcpListener::bind(config.bind).await.map_err(|source| ServerError::Bind {
        addr: config.bind,
        source,
    })?;
    tracing::info!(addr = %config.bind, "listening");
    axum::serve(listener, app).await.map_err(|source| ServerError::Bind {
        addr: config.bind,
        source,
    })
}

/// Runs blocking engine work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub sessions: usize,
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        sessions: state.store.len(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub greeting: String,
    pub suggestions: Vec<String>,
}

async fn create_session(State(state): State<Arc<AppState>>) -> Result<(StatusCode, Json<CreatedSession>), ApiError> {
    let session = blocking(move || Ok(state.store.create(&state.engine)?)).await?;
    let greeting = session
        .history()
        .iter()
        .find(|t| t.role == Role::Agent)
        .map(|t| t.text.clone())
        .unwrap_or_default();
    let suggestions = session
        .current_followups
        .as_ref()
        .map(|f| f.questions.clone())
        .unwrap_or_default();
    Ok((
        StatusCode::CREATED,
        Json(CreatedSession {
            session_id: session.session_id,
            greeting,
            suggestions,
        }),
    ))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageRequest {
    pub text: String,
    #[serde(default)]
    pub method: Option<FollowupMethod>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageResponse {
    pub session_id: String,
    /// The query as sent to the engine (for `/explain`, the rendered
    /// explanation request).
    pub query: String,
    pub reply: String,
    /// Ids of the reference QA pairs the answer was grounded in.
    pub retrieved_ids: Vec<String>,
    /// Current follow-ups after the turn.
    pub followups: Option<FollowupSet>,
    /// Set when follow-up refresh failed and the previous set was kept.
    pub followup_error: Option<String>,
}

fn respond_in(
    state: &AppState,
    id: &str,
    query: String,
    method: Option<FollowupMethod>,
) -> Result<MessageResponse, ApiError> {
    let response = state.store.with_session(id, |session: &mut ChatSession| {
        let outcome = state.engine.respond(session, &query, method)?;
        Ok(MessageResponse {
            session_id: session.session_id.clone(),
            query: query.trim().to_string(),
            reply: outcome.reply,
            retrieved_ids: outcome.prompt.retrieved_block.iter().map(|qa| qa.id.clone()).collect(),
            followups: session.current_followups.clone(),
            followup_error: outcome.followup_error,
        })
    })?;
    Ok(response)
}

async fn send_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<MessageRequest>, JsonRejection>,
) -> Result<Json<MessageResponse>, ApiError> {
    let req = body(payload)?;
    blocking(move || respond_in(&state, &id, req.text, req.method)).await.map(Json)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExplainRequest {
    pub selected: String,
    #[serde(default)]
    pub method: Option<FollowupMethod>,
}

async fn explain(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<ExplainRequest>, JsonRejection>,
) -> Result<Json<MessageResponse>, ApiError> {
    let req = body(payload)?;
    blocking(move || {
        let query = state.engine.explain_query(&req.selected)?;
        respond_in(&state, &id, query, req.method)
    })
    .await
    .map(Json)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TopicState {
    pub active_topic: Option<String>,
    /// Menu preselection for the latest query; absent before the first one.
    pub detected_topic: Option<String>,
    pub topics: Vec<String>,
}

async fn get_topic(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<TopicState>, ApiError> {
    blocking(move || {
        let session = state.store.get(&id)?;
        let detected_topic = match state.engine.current_topic(&session) {
            Ok(topic) => Some(topic),
            Err(ChatError::NoQuery) => None,
            Err(e) => return Err(e.into()),
        };
        Ok(TopicState {
            active_topic: session.active_topic.clone(),
            detected_topic,
            topics: state.engine.taxonomy.names().map(str::to_string).collect(),
        })
    })
    .await
    .map(Json)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TopicRequest {
    pub topic: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TopicSwitched {
    pub active_topic: String,
    pub followups: FollowupSet,
}

async fn switch_topic(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<TopicRequest>, JsonRejection>,
) -> Result<Json<TopicSwitched>, ApiError> {
    let req = body(payload)?;
    blocking(move || {
        let followups = state
            .store
            .with_session(&id, |s| state.engine.switch_topic(s, &req.topic))?;
        Ok(TopicSwitched {
            active_topic: req.topic,
            followups,
        })
    })
    .await
    .map(Json)
}

async fn example(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<ServedExample>, ApiError> {
    blocking(move || Ok(state.store.with_session(&id, |s| state.engine.example(s))?))
        .await
        .map(Json)
}

#[derive(Debug, Deserialize)]
struct AutocompleteQuery {
    #[serde(default)]
    q: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Suggestion {
    pub question: String,
    pub doc_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AutocompleteResponse {
    pub suggestions: Vec<Suggestion>,
}

async fn autocomplete(
    State(state): State<Arc<AppState>>,
    Query(query): Query<AutocompleteQuery>,
) -> Json<AutocompleteResponse> {
    let suggestions = state
        .autocomplete
        .suggest_n(&query.q, state.autocomplete_cap)
        .into_iter()
        .map(|e| Suggestion {
            question: e.question.clone(),
            doc_id: e.doc_id.clone(),
        })
        .collect();
    Json(AutocompleteResponse { suggestions })
}

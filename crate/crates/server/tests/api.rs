use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use healthchat_core::artifacts::{self, DataLayout, EngineSettings};
use healthchat_core::chat::{SessionStore, StepClock};
use healthchat_core::embedding::HashedTrigramProvider;
use healthchat_core::llm::{offline_reply, LlmGateway, ScriptedStub};
use healthchat_core::peer_examples::DISCLAIMER;
use healthchat_server::{api_routes, router, AppState, ServerConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            std::fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
        }
    }
}

/// The shipped corpus with snapshots built once per test binary.
fn data_dir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let repo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
        let dir = tempfile::tempdir().unwrap();
        copy_dir(&repo.join("corpus"), &dir.path().join("corpus"));
        copy_dir(&repo.join("config"), &dir.path().join("config"));
        let llm = ScriptedStub::responder(offline_reply);
        artifacts::build_all(&DataLayout::new(dir.path()), &HashedTrigramProvider::default(), &llm).unwrap();
        dir
    })
    .path()
}

fn app_with(llm: Arc<dyn LlmGateway>) -> Router {
    let layout = DataLayout::new(data_dir());
    let loaded = artifacts::load_engine(&layout, &EngineSettings::default(), llm, Arc::new(StepClock::new(0))).unwrap();
    api_routes(Arc::new(AppState {
        engine: loaded.engine,
        store: SessionStore::in_memory(),
        autocomplete: loaded.autocomplete,
        autocomplete_cap: 5,
    }))
}

fn offline_app() -> Router {
    app_with(Arc::new(ScriptedStub::responder(offline_reply)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn new_session(app: &Router) -> String {
    let (status, body) = call(app, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    body["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn create_then_message_round_trip() {
    let app = offline_app();
    let (status, created) = call(&app, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(!created["greeting"].as_str().unwrap().is_empty());
    assert_eq!(created["suggestions"].as_array().unwrap().len(), 4);
    let id = created["session_id"].as_str().unwrap();

    let (status, reply) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/messages"),
        Some(json!({"text": "How should I prepare for a colonoscopy?", "method": "retrieval_based"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{reply}");
    assert_eq!(reply["session_id"], id);
    assert_eq!(reply["retrieved_ids"].as_array().unwrap().len(), 10);
    assert!(!reply["reply"].as_str().unwrap().is_empty());
    let followups = reply["followups"]["questions"].as_array().unwrap();
    assert!((1..=4).contains(&followups.len()));

    let (status, health) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["sessions"], 1);
}

#[tokio::test]
async fn unknown_session_is_404_with_structured_body() {
    let app = offline_app();
    for (method, uri, body) in [
        ("POST", "/sessions/nope/messages", Some(json!({"text": "hi"}))),
        ("GET", "/sessions/nope/topic", None),
        ("POST", "/sessions/nope/example", None),
    ] {
        let (status, body) = call(&app, method, uri, body).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(body["code"], "not_found");
        assert!(body["message"].is_string());
    }
}

#[tokio::test]
async fn invalid_bodies_are_400() {
    let app = offline_app();
    let id = new_session(&app).await;
    let uri = format!("/sessions/{id}/messages");
    let (status, body) = call(&app, "POST", &uri, Some(json!({"nope": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_request");
    let (status, _) = call(&app, "POST", &uri, Some(json!({"text": "  "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", &uri, Some(json!({"text": "hi", "method": "magic"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_message_on_one_session_is_409() {
    let slow = ScriptedStub::responder(|req| {
        std::thread::sleep(Duration::from_millis(400));
        offline_reply(req)
    });
    let app = app_with(Arc::new(slow));
    let id = new_session(&app).await;
    let uri = format!("/sessions/{id}/messages");
    let first = call(&app, "POST", &uri, Some(json!({"text": "What is a polyp?", "method": "retrieval_based"})));
    let second = async {
        tokio::time::sleep(Duration::from_millis(100)).await;
        call(&app, "POST", &uri, Some(json!({"text": "And a stoma?"}))).await
    };
    let ((s1, _), (s2, b2)) = tokio::join!(first, second);
    assert_eq!(s1, StatusCode::OK);
    assert_eq!(s2, StatusCode::CONFLICT);
    assert_eq!(b2["code"], "busy");
}

#[tokio::test]
async fn llm_failure_is_502_and_history_is_kept() {
    let app = app_with(Arc::new(ScriptedStub::unavailable()));
    let id = new_session(&app).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "hi"}))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(body["code"], "llm_error");
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/example"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "no_exchange");
}

#[tokio::test]
async fn every_example_carries_the_disclaimer() {
    let app = offline_app();
    let id = new_session(&app).await;
    for q in [
        "How should I prepare for a colonoscopy?",
        "I was just diagnosed with rectal cancer",
        "Can polyps come back?",
        "How do I look after my stoma?",
        "What should I eat during chemotherapy?",
    ] {
        let (status, _) = call(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": q}))).await;
        assert_eq!(status, StatusCode::OK);
        let (status, ex) = call(&app, "POST", &format!("/sessions/{id}/example"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(ex["disclaimer"], DISCLAIMER);
        assert_eq!(ex["post"]["ad_flag"], false);
    }
}

#[tokio::test]
async fn autocomplete_returns_at_most_five() {
    let app = offline_app();
    for q in ["", "w", "What", "How", "Is", "zzzz"] {
        let (status, body) = call(&app, "GET", &format!("/autocomplete?q={q}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let s = body["suggestions"].as_array().unwrap();
        assert!(s.len() <= 5, "{q}");
        for item in s {
            assert!(item["question"].as_str().unwrap().to_lowercase().starts_with(&q.to_lowercase()));
        }
    }
    let (_, body) = call(&app, "GET", "/autocomplete?q=What", None).await;
    assert_eq!(body["suggestions"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn topic_get_and_switch() {
    let app = offline_app();
    let id = new_session(&app).await;
    let uri = format!("/sessions/{id}/topic");
    let (status, state) = call(&app, "GET", &uri, None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(state["detected_topic"].is_null());
    assert_eq!(state["topics"].as_array().unwrap().len(), 16);

    call(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": "My stomach pain is bad"}))).await;
    let (_, state) = call(&app, "GET", &uri, None).await;
    assert!(state["detected_topic"].is_string());

    let (status, body) = call(&app, "POST", &uri, Some(json!({"topic": "Astrology"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_request");
    let (status, body) = call(&app, "POST", &uri, Some(json!({"topic": "Dietary Focus"}))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["active_topic"], "Dietary Focus");
    let (_, state) = call(&app, "GET", &uri, None).await;
    assert_eq!(state["active_topic"], "Dietary Focus");
}

#[tokio::test]
async fn explain_wraps_the_selection() {
    let app = offline_app();
    let id = new_session(&app).await;
    let uri = format!("/sessions/{id}/explain");
    let (status, body) = call(&app, "POST", &uri, Some(json!({"selected": "CEA"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["query"], "Please introduce what CEA is");
    let (status, _) = call(&app, "POST", &uri, Some(json!({"selected": ""}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn message_latency_with_offline_gateway() {
    let app = offline_app();
    let id = new_session(&app).await;
    let mut times = Vec::new();
    for q in ["What is a polyp?", "How is rectal cancer treated?", "Can I exercise?", "Is CEA reliable?", "Diet tips?"] {
        let start = Instant::now();
        let (status, _) = call(&app, "POST", &format!("/sessions/{id}/messages"), Some(json!({"text": q}))).await;
        times.push(start.elapsed());
        assert_eq!(status, StatusCode::OK);
    }
    times.sort();
    let median = times[times.len() / 2];
    assert!(median < Duration::from_millis(if cfg!(debug_assertions) { 1000 } else { 100 }), "{median:?}");
}

#[tokio::test]
async fn config_driven_load_serves_the_same_api() {
    let config: ServerConfig = serde_json::from_value(json!({
        "data_dir": data_dir(),
        "persist_sessions": false,
        "cors_origins": ["http://localhost:5173"],
    }))
    .unwrap();
    let state = tokio::task::spawn_blocking({
        let config = config.clone();
        move || AppState::load(&config)
    })
    .await
    .unwrap()
    .unwrap();
    let app = router(Arc::new(state), &config);
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/sessions")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "http://localhost:5173");
    new_session(&app).await;

    let strict = ServerConfig {
        per_category_cap: 1,
        ..config
    };
    assert!(AppState::load(&strict).is_err());
}

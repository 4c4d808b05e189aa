mod common;

use std::collections::HashSet;
use std::sync::Arc;

use healthchat_core::chat::{ChatSession, Role};
use healthchat_core::embedding::{self, EmbeddingProvider, HashedTrigramProvider};
use healthchat_core::followup::{FollowupError, FollowupMethod, MAX_FOLLOWUPS};
use healthchat_core::llm::{offline_reply, ScriptedStub};
use healthchat_core::retrieval::{DocIndex, ScoredDoc};
use healthchat_core::topics::{TopicBackend, TopicError, TopicModel, TopicSource};

struct Poisoned;

impl TopicSource for Poisoned {
    fn assign_topic(&self, _: &str, _: &dyn EmbeddingProvider) -> Result<i32, TopicError> {
        panic!("topic model must not be consulted");
    }

    fn in_topic_docs(
        &self,
        _: i32,
        _: &str,
        _: usize,
        _: &DocIndex,
        _: &dyn EmbeddingProvider,
    ) -> Result<Vec<ScoredDoc>, TopicError> {
        panic!("topic model must not be consulted");
    }
}

fn session_after(query: &str, answer: &str) -> ChatSession {
    let mut s = ChatSession::new("t");
    s.push(Role::Agent, "Hello", 0);
    s.push(Role::User, query, 1);
    s.push(Role::Agent, answer, 2);
    s
}

#[test]
fn llm_only_never_touches_topic_models() {
    let mut loaded = common::engine_with(Arc::new(ScriptedStub::responder(offline_reply)));
    loaded.engine.followups.topic_model = Arc::new(Poisoned);
    loaded.engine.followups.kmeans_model = Arc::new(Poisoned);
    let stub = ScriptedStub::sequence(["1. What next?\n2. Any diet advice?"]);
    let set = loaded
        .engine
        .followups
        .suggest(&session_after("What is a polyp?", "A growth."), FollowupMethod::LlmOnly, &stub)
        .unwrap();
    assert_eq!(set.questions, ["What next?", "Any diet advice?"]);
    assert!(set.context_doc_ids.is_empty());
    let prompt = stub.recording()[0].last_user().unwrap().to_string();
    assert!(!prompt.contains("Questions other patients asked"));
}

#[test]
fn outlier_query_degrades_to_llm_only_prompt() {
    let loaded = common::engine_with(Arc::new(ScriptedStub::responder(offline_reply)));
    let model = TopicModel::load(&common::built_layout().topic_model(TopicBackend::CentroidOutlier)).unwrap();
    let provider = HashedTrigramProvider::default();
    let far = common::far_query(&model, &provider);
    let session = session_after(&far, "I am not sure what you mean.");

    let topic_stub = ScriptedStub::sequence(["Could you rephrase?"]);
    let set = loaded.engine.followups.suggest(&session, FollowupMethod::TopicLlm, &topic_stub).unwrap();
    assert!(set.context_doc_ids.is_empty());
    assert_eq!(set.method, FollowupMethod::TopicLlm);

    let only_stub = ScriptedStub::sequence(["Could you rephrase?"]);
    loaded.engine.followups.suggest(&session, FollowupMethod::LlmOnly, &only_stub).unwrap();
    assert_eq!(topic_stub.recording(), only_stub.recording());
}

#[test]
fn topic_llm_context_comes_from_the_assigned_topic() {
    let loaded = common::engine_with(Arc::new(ScriptedStub::responder(offline_reply)));
    let model = TopicModel::load(&common::built_layout().topic_model(TopicBackend::CentroidOutlier)).unwrap();
    let provider = HashedTrigramProvider::default();
    let q = "How long is the hospital stay after bowel surgery?";
    let topic = model.assign_topic(q, &provider).unwrap();
    assert!(topic >= 0);
    let stub = ScriptedStub::responder(offline_reply);
    let set = loaded
        .engine
        .followups
        .suggest(&session_after(q, "About a week."), FollowupMethod::TopicLlm, &stub)
        .unwrap();
    assert_eq!(set.context_doc_ids.len(), 10);
    assert!(set.context_doc_ids.iter().all(|id| model.assignments[id] == topic));
    let prompt = stub.recording()[0].last_user().unwrap().to_string();
    for id in &set.context_doc_ids {
        let text = &loaded.engine.followups.conv_index.get(id).unwrap().text;
        assert!(prompt.contains(text.as_str()));
    }
}

/// Tags found in the query select the pool; rank the pool by cosine then
/// id; drop repeated texts; keep four.
fn retrieval_oracle(query: &str) -> Vec<String> {
    let lookup = &common::bundle().lookup_qa;
    let provider = HashedTrigramProvider::default();
    let lower = query.to_lowercase();
    let tags: HashSet<String> = lookup
        .iter()
        .flat_map(|q| q.disease_tags.iter().map(|t| t.to_lowercase()))
        .filter(|t| lower.contains(t.as_str()))
        .collect();
    let mut pool: Vec<_> = lookup
        .iter()
        .filter(|q| tags.is_empty() || q.disease_tags.iter().any(|t| tags.contains(&t.to_lowercase())))
        .collect();
    let qv = embedding::embed(&provider, query).unwrap();
    let score = |text: &str| embedding::cosine(&qv, &embedding::embed(&provider, text).unwrap()).unwrap();
    pool.sort_by(|a, b| score(&b.question).partial_cmp(&score(&a.question)).unwrap().then(a.id.cmp(&b.id)));
    let mut out: Vec<String> = Vec::new();
    for qa in pool {
        if !out.contains(&qa.question) {
            out.push(qa.question.clone());
        }
        if out.len() == MAX_FOLLOWUPS {
            break;
        }
    }
    out
}

#[test]
fn retrieval_based_matches_filter_then_rank_oracle() {
    let loaded = common::engine_with(Arc::new(ScriptedStub::unavailable()));
    for q in [
        "What should I eat with ulcerative colitis?",
        "Is radiation enteritis the same as enteritis?",
        "My stomach hurts",
        "Crohn's disease and Lynch syndrome in one family",
    ] {
        let set = loaded
            .engine
            .followups
            .suggest(&session_after(q, "ok"), FollowupMethod::RetrievalBased, &ScriptedStub::unavailable())
            .unwrap();
        assert_eq!(set.questions, retrieval_oracle(q), "query {q:?}");
        assert_eq!(set.context_doc_ids.len(), set.questions.len());
    }
}

#[test]
fn every_method_is_total_over_base_sessions() {
    let loaded = common::engine_with(Arc::new(ScriptedStub::responder(offline_reply)));
    let offline = ScriptedStub::responder(offline_reply);
    let down = ScriptedStub::unavailable();
    for qa in common::bundle().base_qa.iter() {
        let session = session_after(&qa.question, &qa.answer);
        for method in FollowupMethod::ALL {
            let set = loaded.engine.followups.suggest(&session, method, &offline).unwrap();
            assert!((1..=MAX_FOLLOWUPS).contains(&set.questions.len()));
            assert!(set.questions.iter().all(|q| !q.trim().is_empty()));
            assert_eq!(set.method, method);
            match loaded.engine.followups.suggest(&session, method, &down) {
                Ok(set) => {
                    assert_eq!(method, FollowupMethod::RetrievalBased);
                    assert!(!set.questions.is_empty());
                }
                Err(FollowupError::Llm { method: m, .. }) => assert_eq!(m, method),
                Err(e) => panic!("untyped failure {e}"),
            }
        }
    }
}

#[test]
fn no_exchange_is_an_error() {
    let loaded = common::engine_with(Arc::new(ScriptedStub::unavailable()));
    let mut s = ChatSession::new("x");
    s.push(Role::Agent, "Hello", 0);
    assert!(matches!(
        loaded.engine.followups.suggest(&s, FollowupMethod::LlmOnly, &ScriptedStub::unavailable()),
        Err(FollowupError::NoExchange)
    ));
}

//! Retrieval-grounded conversational engine for colorectal-health questions.
//!
//! Answers are grounded in curated professional QA corpora, follow-up
//! questions are suggested from topic clusters of doctor–patient
//! conversations, user input is autocompleted against disease-lookup
//! questions, and curated peer-community posts are served as real-world
//! examples with a fixed disclaimer.
//!
//! Everything runs offline: the hashed-trigram embedding provider and the
//! scripted LLM stub stand in for remote services, which sit behind the
//! [`embedding::EmbeddingProvider`] and [`llm::LlmGateway`] seams.

pub mod artifacts;
pub mod autocomplete;
pub mod chat;
pub mod corpus;
pub mod embedding;
pub mod followup;
pub mod jsonl;
pub mod llm;
pub mod peer_examples;
pub mod retrieval;
pub mod template;
pub mod topics;

/// Version stamped into every snapshot file written by this crate.
pub const SNAPSHOT_VERSION: u32 = 1;

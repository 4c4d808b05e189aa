//! Loading and validation of the three data sources: professional QA pairs,
//! doctor–patient conversations, and peer-community posts.
//!
//! All corpus files are UTF-8 JSON Lines. Texts are trimmed at load time and
//! otherwise left untouched.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl;

pub const BASE_QA_FILE: &str = "base_qa.jsonl";
pub const LOOKUP_QA_FILE: &str = "lookup_qa.jsonl";
pub const CONVERSATIONS_FILE: &str = "conversations.jsonl";
pub const POSTS_FILE: &str = "posts.jsonl";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: empty corpus")]
    Empty { path: PathBuf },
    #[error("{path}: line {line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: line {line}: duplicate id `{id}`")]
    DuplicateId { path: PathBuf, line: usize, id: String },
    #[error("{path}: line {line}: field `{field}` is empty")]
    EmptyField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },
    #[error("{path}: line {line}: counter `{field}` is negative ({value})")]
    NegativeCounter {
        path: PathBuf,
        line: usize,
        field: &'static str,
        value: i64,
    },
    #[error("{path}: line {line}: source `{found}` does not match expected `{expected}`")]
    SourceMismatch {
        path: PathBuf,
        line: usize,
        expected: Source,
        found: Source,
    },
}

impl CorpusError {
    pub fn is_io(&self) -> bool {
        matches!(self, CorpusError::Io { .. })
    }
}

/// Where a QA pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Base,
    DiseaseLookup,
    Conversation,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Base => "base",
            Source::DiseaseLookup => "disease_lookup",
            Source::Conversation => "conversation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub source: Source,
    #[serde(default)]
    pub disease_tags: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Patient,
    Doctor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: String,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub tags: Vec<String>,
    pub likes: u64,
    pub comments: u64,
    pub shares: u64,
    pub collections: u64,
    #[serde(default)]
    pub ad_flag: bool,
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusBundle {
    pub base_qa: Vec<QAPair>,
    pub lookup_qa: Vec<QAPair>,
    pub conversation_qa: Vec<QAPair>,
    pub posts: Vec<RawPost>,
}

impl CorpusBundle {
    /// Loads the four corpus files from `dir`.
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let base_qa = load_qa_corpus(&dir.join(BASE_QA_FILE), Source::Base)?;
        let lookup_qa = load_qa_corpus(&dir.join(LOOKUP_QA_FILE), Source::DiseaseLookup)?;
        let conv_path = dir.join(CONVERSATIONS_FILE);
        let conversations = load_conversations(&conv_path)?;
        let conversation_qa: Vec<QAPair> =
            conversations.iter().flat_map(pair_conversation).collect();
        let mut seen = HashSet::new();
        for (idx, pair) in conversation_qa.iter().enumerate() {
            if !seen.insert(pair.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    path: conv_path,
                    line: idx + 1,
                    id: pair.id.clone(),
                });
            }
        }
        let posts = load_posts(&dir.join(POSTS_FILE))?;
        Ok(Self {
            base_qa,
            lookup_qa,
            conversation_qa,
            posts,
        })
    }
}

#[derive(Deserialize)]
struct QaRecord {
    id: String,
    question: String,
    answer: String,
    #[serde(default)]
    source: Option<Source>,
    #[serde(default)]
    disease_tags: Vec<String>,
}

#[derive(Deserialize)]
struct PostRecord {
    id: String,
    #[serde(default)]
    title: String,
    body: String,
    #[serde(default)]
    tags: Vec<String>,
    likes: i64,
    comments: i64,
    shares: i64,
    collections: i64,
    #[serde(default)]
    ad_flag: bool,
    created_at: i64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_records<T: for<'de> Deserialize<'de>>(
    path: &Path,
) -> Result<Vec<(usize, T)>, CorpusError> {
    let lines = jsonl::read_lines(path).map_err(io_err(path))?;
    if lines.is_empty() {
        return Err(CorpusError::Empty {
            path: path.to_path_buf(),
        });
    }
    lines
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text)
                .map(|rec| (line, rec))
                .map_err(|e| CorpusError::Malformed {
                    path: path.to_path_buf(),
                    line,
                    message: e.to_string(),
                })
        })
        .collect()
}

fn non_empty(
    path: &Path,
    line: usize,
    field: &'static str,
    text: &str,
) -> Result<String, CorpusError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(CorpusError::EmptyField {
            path: path.to_path_buf(),
            line,
            field,
        });
    }
    Ok(trimmed.to_string())
}

fn check_unique<'a>(
    seen: &mut HashSet<String>,
    path: &Path,
    line: usize,
    id: &'a str,
) -> Result<&'a str, CorpusError> {
    if !seen.insert(id.to_string()) {
        return Err(CorpusError::DuplicateId {
            path: path.to_path_buf(),
            line,
            id: id.to_string(),
        });
    }
    Ok(id)
}

/// Loads a QA corpus, tagging every record with `source`.
pub fn load_qa_corpus(path: &Path, source: Source) -> Result<Vec<QAPair>, CorpusError> {
    let records: Vec<(usize, QaRecord)> = parse_records(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let id = non_empty(path, line, "id", &rec.id)?;
        check_unique(&mut seen, path, line, &id)?;
        if let Some(found) = rec.source {
            if found != source {
                return Err(CorpusError::SourceMismatch {
                    path: path.to_path_buf(),
                    line,
                    expected: source,
                    found,
                });
            }
        }
        out.push(QAPair {
            question: non_empty(path, line, "question", &rec.question)?,
            answer: non_empty(path, line, "answer", &rec.answer)?,
            id,
            source,
            disease_tags: rec.disease_tags.iter().map(|t| t.trim().to_string()).collect(),
        });
    }
    Ok(out)
}

pub fn load_conversations(path: &Path) -> Result<Vec<Conversation>, CorpusError> {
    let records: Vec<(usize, Conversation)> = parse_records(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, conv) in records {
        let id = non_empty(path, line, "id", &conv.id)?;
        check_unique(&mut seen, path, line, &id)?;
        if conv.turns.is_empty() {
            return Err(CorpusError::EmptyField {
                path: path.to_path_buf(),
                line,
                field: "turns",
            });
        }
        let turns = conv
            .turns
            .into_iter()
            .map(|t| {
                Ok(Turn {
                    speaker: t.speaker,
                    text: non_empty(path, line, "text", &t.text)?,
                })
            })
            .collect::<Result<Vec<_>, CorpusError>>()?;
        out.push(Conversation { id, turns });
    }
    Ok(out)
}

/// Turns a conversation into QA pairs by run-length pairing.
///
/// Consecutive patient turns form one question; the consecutive doctor turns
/// immediately after form its answer. Leading doctor turns and a trailing
/// unanswered patient run produce nothing. Runs are joined with a single
/// space.
pub fn pair_conversation(conv: &Conversation) -> Vec<QAPair> {
    let mut runs: Vec<(Speaker, Vec<&str>)> = Vec::new();
    for turn in &conv.turns {
        match runs.last_mut() {
            Some((speaker, texts)) if *speaker == turn.speaker => texts.push(&turn.text),
            _ => runs.push((turn.speaker, vec![&turn.text])),
        }
    }
    runs.windows(2)
        .filter(|w| w[0].0 == Speaker::Patient && w[1].0 == Speaker::Doctor)
        .enumerate()
        .map(|(idx, w)| QAPair {
            id: format!("{}#{}", conv.id, idx),
            question: w[0].1.join(" "),
            answer: w[1].1.join(" "),
            source: Source::Conversation,
            disease_tags: Vec::new(),
        })
        .collect()
}

pub fn load_posts(path: &Path) -> Result<Vec<RawPost>, CorpusError> {
    let records: Vec<(usize, PostRecord)> = parse_records(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (line, rec) in records {
        let id = non_empty(path, line, "id", &rec.id)?;
        check_unique(&mut seen, path, line, &id)?;
        let counter = |field: &'static str, value: i64| {
            u64::try_from(value).map_err(|_| CorpusError::NegativeCounter {
                path: path.to_path_buf(),
                line,
                field,
                value,
            })
        };
        out.push(RawPost {
            likes: counter("likes", rec.likes)?,
            comments: counter("comments", rec.comments)?,
            shares: counter("shares", rec.shares)?,
            collections: counter("collections", rec.collections)?,
            title: rec.title.trim().to_string(),
            body: non_empty(path, line, "body", &rec.body)?,
            tags: rec.tags.iter().map(|t| t.trim().to_string()).collect(),
            ad_flag: rec.ad_flag,
            created_at: rec.created_at,
            id,
        });
    }
    Ok(out)
}

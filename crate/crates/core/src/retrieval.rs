//! Exact top-k cosine retrieval over embedded documents.
//!
//! The index is a flat scan: document norms are cached at build time and a
//! query costs one dot product per candidate. Ties in score are broken by
//! ascending document id so that results are fully deterministic.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QAPair;
use crate::embedding::{self, cosine_with_norms, EmbeddingError, EmbeddingProvider, Vector};
use crate::SNAPSHOT_VERSION;

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot build an index from an empty document list")]
    EmptyCorpus,
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index was built with provider `{index}` but query uses `{provider}`")]
    ProviderMismatch { index: String, provider: String },
    #[error("embedding failed: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("cannot access snapshot {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid snapshot {path}: {message}")]
    Snapshot { path: PathBuf, message: String },
    #[error("snapshot {path} has version {found}, expected {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
}

/// A retrievable document. `text` is what gets embedded; `payload` rides
/// along (the answer, for QA pairs).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            payload: None,
        }
    }

    /// Indexes the question; the answer becomes the payload.
    pub fn from_qa(pair: &QAPair) -> Self {
        Self {
            id: pair.id.clone(),
            text: pair.question.clone(),
            payload: Some(pair.answer.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    provider_name: String,
    dim: usize,
    docs: Vec<Document>,
    vectors: Vec<Vector>,
}

/// Immutable document index.
#[derive(Debug, Clone)]
pub struct DocIndex {
    provider_name: String,
    dim: usize,
    docs: Vec<Document>,
    vectors: Vec<Vector>,
    norms: Vec<f64>,
    positions: HashMap<String, usize>,
}

/// Orders `(score, id)` pairs best-first.
pub fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

impl DocIndex {
    /// Embeds every document's text. Any embedding failure aborts the build.
    pub fn build(docs: Vec<Document>, provider: &dyn EmbeddingProvider) -> Result<Self, RetrievalError> {
        if docs.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
        check_unique(&docs)?;
        let vectors = embedding::embed_all(provider, &texts)?;
        Self::assemble(provider.name().to_string(), provider.dim(), docs, vectors)
    }

    fn assemble(
        provider_name: String,
        dim: usize,
        docs: Vec<Document>,
        vectors: Vec<Vector>,
    ) -> Result<Self, RetrievalError> {
        let positions = check_unique(&docs)?;
        let norms = vectors
            .iter()
            .map(|v| match v.norm() {
                n if n > 0.0 => Ok(n),
                _ => Err(RetrievalError::Embedding(EmbeddingError::ZeroNorm)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            provider_name,
            dim,
            docs,
            vectors,
            norms,
            positions,
        })
    }

    pub fn from_qa_pairs<'a>(
        pairs: impl IntoIterator<Item = &'a QAPair>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, RetrievalError> {
        Self::build(pairs.into_iter().map(Document::from_qa).collect(), provider)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provider_name(&self) -> &str {
        &self.provider_name
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn vectors(&self) -> &[Vector] {
        &self.vectors
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.positions.get(id).map(|&i| &self.docs[i])
    }

    pub fn vector_of(&self, id: &str) -> Option<&Vector> {
        self.positions.get(id).map(|&i| &self.vectors[i])
    }

    pub fn check_provider(&self, provider: &dyn EmbeddingProvider) -> Result<(), RetrievalError> {
        if provider.name() != self.provider_name || provider.dim() != self.dim {
            return Err(RetrievalError::ProviderMismatch {
                index: self.provider_name.clone(),
                provider: provider.name().to_string(),
            });
        }
        Ok(())
    }

    pub fn embed_query(
        &self,
        query: &str,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vector, RetrievalError> {
        if query.trim().is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        self.check_provider(provider)?;
        Ok(embedding::embed(provider, query)?)
    }

    /// The `k` documents most similar to `query`.
    pub fn top_k(
        &self,
        query: &str,
        k: usize,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vec<ScoredDoc>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let q = self.embed_query(query, provider)?;
        self.top_k_by_vector(&q, k, |_| true)
    }

    /// Ranks the documents accepted by `filter` against a pre-embedded query.
    pub fn top_k_by_vector(
        &self,
        query: &Vector,
        k: usize,
        filter: impl Fn(&Document) -> bool,
    ) -> Result<Vec<ScoredDoc>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                left: query.dim(),
                right: self.dim,
            }
            .into());
        }
        let qn = query.norm();
        if qn == 0.0 {
            return Err(EmbeddingError::ZeroNorm.into());
        }
        let mut scored: Vec<(f64, usize)> = self
            .docs
            .iter()
            .enumerate()
            .filter(|(_, d)| filter(d))
            .map(|(i, _)| (cosine_with_norms(query, qn, &self.vectors[i], self.norms[i]), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            rank_order((a.0, &self.docs[a.1].id), (b.0, &self.docs[b.1].id))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(rank, (score, i))| ScoredDoc {
                doc_id: self.docs[i].id.clone(),
                score,
                rank: rank + 1,
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let snap = Snapshot {
            version: SNAPSHOT_VERSION,
            provider_name: self.provider_name.clone(),
            dim: self.dim,
            docs: self.docs.clone(),
            vectors: self.vectors.clone(),
        };
        crate::jsonl::write_json(path, &snap).map_err(|source| RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let bytes = std::fs::read(path).map_err(|source| RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |message: String| RetrievalError::Snapshot {
            path: path.to_path_buf(),
            message,
        };
        let version = crate::artifacts::peek_version(&bytes).map_err(bad)?;
        if version != SNAPSHOT_VERSION {
            return Err(RetrievalError::VersionMismatch {
                path: path.to_path_buf(),
                found: version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let snap: Snapshot = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
        if snap.docs.len() != snap.vectors.len() {
            return Err(bad("docs and vectors differ in length".into()));
        }
        if snap.vectors.iter().any(|v| v.dim() != snap.dim) {
            return Err(bad(format!("vector dimension differs from {}", snap.dim)));
        }
        Self::assemble(snap.provider_name, snap.dim, snap.docs, snap.vectors)
    }
}

fn check_unique(docs: &[Document]) -> Result<HashMap<String, usize>, RetrievalError> {
    let mut positions = HashMap::with_capacity(docs.len());
    for (i, d) in docs.iter().enumerate() {
        if positions.insert(d.id.clone(), i).is_some() {
            return Err(RetrievalError::DuplicateId(d.id.clone()));
        }
    }
    Ok(positions)
}

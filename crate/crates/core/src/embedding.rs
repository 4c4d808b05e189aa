//! Text embeddings behind a provider seam, and the vector arithmetic used by
//! retrieval, topic clustering and post matching.
//!
//! Two providers ship: [`HashedTrigramProvider`], a deterministic offline
//! embedding (hashed character trigrams randomly projected with a seeded sign
//! matrix), and [`RemoteProvider`], which posts batches to an HTTP endpoint.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("text {0:?} has no embeddable characters")]
    NoFeatures(String),
    #[error("vector dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("vector contains non-finite values")]
    NonFinite,
    #[error("vector must have at least one dimension")]
    ZeroDimension,
    #[error("provider {provider}: expected dimension {expected}, got {got}")]
    WrongDimension {
        provider: String,
        expected: usize,
        got: usize,
    },
    #[error("provider {provider}: request timed out")]
    Timeout { provider: String },
    #[error("provider {provider}: {message}")]
    Remote { provider: String, message: String },
}

/// A finite, non-empty embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDimension);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// Returns the unit vector in the same direction.
    pub fn normalized(&self) -> Result<Vector, EmbeddingError> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        Ok(Vector(self.0.iter().map(|v| v / norm).collect()))
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Vector::new(values)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok(cosine_with_norms(a, na, b, nb))
}

/// Cosine with precomputed norms; both norms must be non-zero.
pub(crate) fn cosine_with_norms(a: &Vector, na: f64, b: &Vector, nb: f64) -> f64 {
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
}

/// A text-to-vector embedding capability.
///
/// Implementations must be deterministic and always return vectors of
/// length [`dim`](EmbeddingProvider::dim).
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vector, EmbeddingError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbeddingError> {
        texts.iter().map(|t| self.embed_text(t)).collect()
    }
}

/// Embeds `text` and checks the provider honored its contract.
pub fn embed(provider: &dyn EmbeddingProvider, text: &str) -> Result<Vector, EmbeddingError> {
    if text.trim().is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let v = provider.embed_text(text)?;
    check_dim(provider, &v)?;
    Ok(v)
}

/// Batch form of [`embed`]. Output order follows input order.
pub fn embed_all(
    provider: &dyn EmbeddingProvider,
    texts: &[&str],
) -> Result<Vec<Vector>, EmbeddingError> {
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(EmbeddingError::EmptyText);
    }
    let vectors = provider.embed_batch(texts)?;
    if vectors.len() != texts.len() {
        return Err(EmbeddingError::Remote {
            provider: provider.name().to_string(),
            message: format!("returned {} vectors for {} texts", vectors.len(), texts.len()),
        });
    }
    for v in &vectors {
        check_dim(provider, v)?;
    }
    Ok(vectors)
}

fn check_dim(provider: &dyn EmbeddingProvider, v: &Vector) -> Result<(), EmbeddingError> {
    if v.dim() != provider.dim() {
        return Err(EmbeddingError::WrongDimension {
            provider: provider.name().to_string(),
            expected: provider.dim(),
            got: v.dim(),
        });
    }
    Ok(())
}

pub const DEFAULT_FALLBACK_DIM: usize = 64;
pub const DEFAULT_FALLBACK_SEED: u64 = 42;

/// Offline embedding: character trigrams of each lowercased word (padded with
/// a space on both sides) are hashed with FNV-1a, projected through a random
/// ±1 matrix derived from `seed`, summed, and L2-normalized.
///
/// Output depends only on the text bytes, `dim` and `seed`.
#[derive(Debug, Clone)]
pub struct HashedTrigramProvider {
    dim: usize,
    seed: u64,
    name: String,
}

impl HashedTrigramProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            seed,
            name: format!("hashed-trigram/d{dim}/s{seed}"),
        }
    }
}

impl Default for HashedTrigramProvider {
    fn default() -> Self {
        Self::new(DEFAULT_FALLBACK_DIM, DEFAULT_FALLBACK_SEED)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hashes of all padded character trigrams in `text`.
fn trigram_hashes(text: &str) -> Vec<u64> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut buf = String::new();
    for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        let padded: Vec<char> = std::iter::once(' ')
            .chain(word.chars())
            .chain(std::iter::once(' '))
            .collect();
        for gram in padded.windows(3) {
            buf.clear();
            buf.extend(gram);
            out.push(fnv1a(buf.as_bytes()));
        }
    }
    out
}

impl EmbeddingProvider for HashedTrigramProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vector, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let grams = trigram_hashes(text);
        if grams.is_empty() {
            return Err(EmbeddingError::NoFeatures(text.to_string()));
        }
        let blocks = self.dim.div_ceil(64);
        let block_keys: Vec<u64> = (0..blocks as u64)
            .map(|b| splitmix64(self.seed ^ splitmix64(b)))
            .collect();
        let mut acc = vec![0.0f64; self.dim];
        for h in grams {
            for (b, key) in block_keys.iter().enumerate() {
                let bits = splitmix64(h ^ key);
                let lo = b * 64;
                let hi = (lo + 64).min(self.dim);
                for (j, slot) in acc[lo..hi].iter_mut().enumerate() {
                    if bits >> j & 1 == 1 {
                        *slot += 1.0;
                    } else {
                        *slot -= 1.0;
                    }
                }
            }
        }
        Vector::new(acc)?
            .normalized()
            .map_err(|_| EmbeddingError::NoFeatures(text.to_string()))
    }
}

pub const DEFAULT_REMOTE_TIMEOUT: Duration = Duration::from_secs(10);

/// HTTP embedding provider.
///
/// Wire format: `POST {"texts": [...]}` answered by `{"vectors": [[...], ...]}`.
pub struct RemoteProvider {
    name: String,
    endpoint: String,
    dim: usize,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct RemoteResponse {
    vectors: Vec<Vec<f64>>,
}

impl RemoteProvider {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>, dim: usize, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            name: name.into(),
            endpoint: endpoint.into(),
            dim,
            agent,
        }
    }

    fn remote_err(&self, message: impl Into<String>) -> EmbeddingError {
        EmbeddingError::Remote {
            provider: self.name.clone(),
            message: message.into(),
        }
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vector, EmbeddingError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop().ok_or_else(|| self.remote_err("empty response"))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, EmbeddingError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(RemoteRequest { texts })
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => EmbeddingError::Timeout {
                    provider: self.name.clone(),
                },
                other => self.remote_err(other.to_string()),
            })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(self.remote_err(format!("HTTP status {status}")));
        }
        let body: RemoteResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| self.remote_err(format!("bad response body: {e}")))?;
        body.vectors.into_iter().map(Vector::new).collect()
    }
}

/// Provider selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSettings {
    HashedTrigram {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    Remote {
        name: String,
        endpoint: String,
        dim: usize,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
}

fn default_dim() -> usize {
    DEFAULT_FALLBACK_DIM
}

fn default_seed() -> u64 {
    DEFAULT_FALLBACK_SEED
}

fn default_timeout_secs() -> u64 {
    DEFAULT_REMOTE_TIMEOUT.as_secs()
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings::HashedTrigram {
            dim: DEFAULT_FALLBACK_DIM,
            seed: DEFAULT_FALLBACK_SEED,
        }
    }
}

impl ProviderSettings {
    pub fn build(&self) -> Arc<dyn EmbeddingProvider> {
        match self {
            ProviderSettings::HashedTrigram { dim, seed } => {
                Arc::new(HashedTrigramProvider::new(*dim, *seed))
            }
            ProviderSettings::Remote {
                name,
                endpoint,
                dim,
                timeout_secs,
            } => Arc::new(RemoteProvider::new(
                name.clone(),
                endpoint.clone(),
                *dim,
                Duration::from_secs(*timeout_secs),
            )),
        }
    }
}

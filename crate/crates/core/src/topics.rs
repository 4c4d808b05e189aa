//! Topic clustering of conversation questions and the fixed topic-switch
//! taxonomy.
//!
//! Questions are clustered with seeded spherical k-means. The
//! `centroid_outlier` backend additionally marks any question whose cosine
//! to its nearest centroid falls below a threshold as an outlier (topic -1);
//! outliers get no in-topic retrieval context downstream.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::ChatSession;
use crate::embedding::{self, EmbeddingError, EmbeddingProvider, Vector};
use crate::llm::{self, ChatMessage, CompletionRequest, LlmGateway};
use crate::retrieval::{DocIndex, Document, RetrievalError, ScoredDoc};
use crate::SNAPSHOT_VERSION;

pub const OUTLIER: i32 = -1;
pub const DEFAULT_TOPIC_COUNT: usize = 13;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_OUTLIER_THRESHOLD: f64 = 0.15;
pub const DEFAULT_IN_TOPIC_DOCS: usize = 10;
const MAX_ITERATIONS: usize = 100;
const CONVERGENCE_SHIFT: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("need at least {k} questions to fit {k} topics, got {have}")]
    TooFewQuestions { have: usize, k: usize },
    #[error("duplicate question id `{0}`")]
    DuplicateId(String),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("topic -1 is the outlier topic and has no documents")]
    OutlierTopic,
    #[error("topic {topic} is out of range for a {k}-topic model")]
    InvalidTopic { topic: i32, k: usize },
    #[error("model was fitted with provider `{model}` but caller uses `{provider}`")]
    ProviderMismatch { model: String, provider: String },
    #[error("embedding failed: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("cannot access {path}: {source}")]
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicBackend {
    CentroidOutlier,
    Kmeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicConfig {
    pub backend: TopicBackend,
    pub k: usize,
    pub seed: u64,
    pub outlier_threshold: f64,
}

impl TopicConfig {
    pub fn new(backend: TopicBackend) -> Self {
        Self {
            backend,
            k: DEFAULT_TOPIC_COUNT,
            seed: DEFAULT_SEED,
            outlier_threshold: DEFAULT_OUTLIER_THRESHOLD,
        }
    }
}

/// A fitted clustering over conversation questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub version: u32,
    pub backend: TopicBackend,
    pub k: usize,
    pub seed: u64,
    pub outlier_threshold: f64,
    pub provider_name: String,
    pub dim: usize,
    pub iterations: usize,
    /// Unit-norm centroids, one per topic.
    pub centroids: Vec<Vector>,
    /// Topic per training document id; -1 marks an outlier.
    pub assignments: BTreeMap<String, i32>,
}

/// Embeds the questions and fits a model.
pub fn fit_topics(
    questions: &[Document],
    config: TopicConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<TopicModel, TopicError> {
    validate_fit(questions.len(), config)?;
    let texts: Vec<&str> = questions.iter().map(|d| d.text.as_str()).collect();
    let vectors = embedding::embed_all(provider, &texts)?;
    let ids: Vec<&str> = questions.iter().map(|d| d.id.as_str()).collect();
    fit_vectors(&ids, &vectors, config, provider.name())
}

/// Fits a model over the vectors already stored in `index`.
pub fn fit_topics_on_index(index: &DocIndex, config: TopicConfig) -> Result<TopicModel, TopicError> {
    let ids: Vec<&str> = index.docs().iter().map(|d| d.id.as_str()).collect();
    fit_vectors(&ids, index.vectors(), config, index.provider_name())
}

fn validate_fit(n: usize, config: TopicConfig) -> Result<(), TopicError> {
    if config.k == 0 {
        return Err(TopicError::InvalidK);
    }
    if n < config.k {
        return Err(TopicError::TooFewQuestions { have: n, k: config.k });
    }
    Ok(())
}

fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let sim = embedding::dot(centroid, point);
        if sim > best.1 {
            best = (c, sim);
        }
    }
    best
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let norm = embedding::dot(v, v).sqrt();
    (norm > 0.0).then(|| v.iter().map(|x| x / norm).collect())
}

/// k-means++ seeding with cosine distance.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut dist: Vec<f64> = vec![f64::INFINITY; points.len()];
    while chosen.len() < k {
        let last = &points[*chosen.last().expect("non-empty")];
        for (d, p) in dist.iter_mut().zip(points) {
            let gap = (1.0 - embedding::dot(last, p)).max(0.0);
            *d = d.min(gap * gap);
        }
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = dist.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            (0..points.len()).find(|i| !chosen.contains(i)).expect("n >= k")
        };
        chosen.push(pick);
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn fit_vectors(
    ids: &[&str],
    vectors: &[Vector],
    config: TopicConfig,
    provider_name: &str,
) -> Result<TopicModel, TopicError> {
    validate_fit(ids.len(), config)?;
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
        return Err(TopicError::DuplicateId(dup.to_string()));
    }
    let dim = vectors[0].dim();
    let points: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.normalized().map(Vec::from))
        .collect::<Result<_, _>>()?;
    let k = config.k;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = seed_centroids(&points, k, &mut rng);
    let mut labels = vec![0usize; points.len()];
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut sims = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (c, s) = nearest(&centroids, p);
            labels[i] = c;
            sims[i] = s;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut next = Vec::with_capacity(k);
        for c in 0..k {
            match unit(&sums[c]).filter(|_| counts[c] > 0) {
                Some(u) => next.push(u),
                None => next.push(centroids[c].clone()),
            }
        }
        // Empty clusters take the worst-fitting point from a cluster that can
        // spare one.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let donor = (0..points.len())
                .filter(|&i| counts[labels[i]] > 1)
                .min_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(a.cmp(&b)));
            if let Some(i) = donor {
                counts[labels[i]] -= 1;
                counts[c] = 1;
                labels[i] = c;
                sims[i] = f64::INFINITY;
                next[c] = points[i].clone();
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < CONVERGENCE_SHIFT {
            break;
        }
    }

    let mut assignments = BTreeMap::new();
    for (id, p) in ids.iter().zip(&points) {
        let (c, sim) = nearest(&centroids, p);
        let topic = match config.backend {
            TopicBackend::CentroidOutlier if sim < config.outlier_threshold => OUTLIER,
            _ => c as i32,
        };
        assignments.insert(id.to_string(), topic);
    }
    Ok(TopicModel {
        version: SNAPSHOT_VERSION,
        backend: config.backend,
        k,
        seed: config.seed,
        outlier_threshold: config.outlier_threshold,
        provider_name: provider_name.to_string(),
        dim,
        iterations,
        centroids: centroids
            .into_iter()
            .map(Vector::new)
            .collect::<Result<_, _>>()?,
        assignments,
    })
}

impl TopicModel {
    /// Nearest centroid by cosine, or -1 for an outlier under the
    /// `centroid_outlier` backend.
    pub fn assign_vector(&self, v: &Vector) -> Result<i32, TopicError> {
        let point = v.normalized()?;
        if point.dim() != self.dim {
            return Err(EmbeddingError::DimensionMismatch {
                left: point.dim(),
                right: self.dim,
            }
            .into());
        }
        let centroids: Vec<&[f64]> = self.centroids.iter().map(|c| c.values()).collect();
        let mut best = (0usize, f64::NEG_INFINITY);
        for (c, centroid) in centroids.iter().enumerate() {
            let sim = embedding::dot(centroid, point.values());
            if sim > best.1 {
                best = (c, sim);
            }
        }
        Ok(match self.backend {
            TopicBackend::CentroidOutlier if best.1 < self.outlier_threshold => OUTLIER,
            _ => best.0 as i32,
        })
    }

    fn check_provider(&self, provider: &dyn EmbeddingProvider) -> Result<(), TopicError> {
        if provider.name() != self.provider_name || provider.dim() != self.dim {
            return Err(TopicError::ProviderMismatch {
                model: self.provider_name.clone(),
                provider: provider.name().to_string(),
            });
        }
        Ok(())
    }

    pub fn members(&self, topic: i32) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .filter(move |(_, t)| **t == topic)
            .map(|(id, _)| id.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<(), TopicError> {
        crate::jsonl::write_json(path, self).map_err(|source| TopicError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TopicError> {
        let bytes = std::fs::read(path).map_err(|source| TopicError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |message: String| TopicError::Snapshot {
            path: path.to_path_buf(),
            message,
        };
        let version = crate::artifacts::peek_version(&bytes).map_err(bad)?;
        if version != SNAPSHOT_VERSION {
            return Err(TopicError::VersionMismatch {
                path: path.to_path_buf(),
                found: version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let model: TopicModel = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
        if model.centroids.len() != model.k || model.centroids.iter().any(|c| c.dim() != model.dim) {
            return Err(bad("centroid count or dimension inconsistent with header".into()));
        }
        if model
            .assignments
            .values()
            .any(|&t| t != OUTLIER && !(0..model.k as i32).contains(&t))
        {
            return Err(bad("assignment out of range".into()));
        }
        Ok(model)
    }
}

/// Topic lookup as used by follow-up generation. Implemented by
/// [`TopicModel`]; tests substitute instrumented versions.
pub trait TopicSource: Send + Sync {
    fn assign_topic(&self, question: &str, provider: &dyn EmbeddingProvider) -> Result<i32, TopicError>;

    fn in_topic_docs(
        &self,
        topic: i32,
        query: &str,
        n: usize,
        index: &DocIndex,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vec<ScoredDoc>, TopicError>;
}

impl TopicSource for TopicModel {
    fn assign_topic(&self, question: &str, provider: &dyn EmbeddingProvider) -> Result<i32, TopicError> {
        if question.trim().is_empty() {
            return Err(TopicError::EmptyQuestion);
        }
        self.check_provider(provider)?;
        self.assign_vector(&embedding::embed(provider, question)?)
    }

    /// Top `n` documents of `topic` by cosine to `query`.
    fn in_topic_docs(
        &self,
        topic: i32,
        query: &str,
        n: usize,
        index: &DocIndex,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Vec<ScoredDoc>, TopicError> {
        if topic == OUTLIER {
            return Err(TopicError::OutlierTopic);
        }
        if !(0..self.k as i32).contains(&topic) {
            return Err(TopicError::InvalidTopic { topic, k: self.k });
        }
        self.check_provider(provider)?;
        let q = index.embed_query(query, provider)?;
        Ok(index.top_k_by_vector(&q, n, |d| self.assignments.get(&d.id) == Some(&topic))?)
    }
}

/// The sixteen knowledge aspects users can switch between, in menu order.
pub const SWITCH_TOPICS: [&str; 16] = [
    "Medical Definitions",
    "Medication Use",
    "Medical Decision-Making",
    "Colon Cancer Treatment",
    "Symptoms and Signs",
    "Misconceptions About Colonoscopy",
    "Family History Risks",
    "Cancer Prevention",
    "Dietary Focus",
    "Risk Factor Identification",
    "Pain Management",
    "Follow-Up Care",
    "Infection Prevention",
    "Dietary Preparation",
    "Colonoscopy Information",
    "Colon Cancer Screening Guidelines",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchTopic {
    pub name: String,
    /// Lowercase substrings used by the fallback classifier.
    pub keywords: Vec<String>,
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("taxonomy must list exactly {expected} topics, found {found}")]
    WrongCount { expected: usize, found: usize },
    #[error("taxonomy entry {position} is `{found}`, expected `{expected}`")]
    WrongName {
        position: usize,
        expected: &'static str,
        found: String,
    },
    #[error("cannot read taxonomy {path}: {message}")]
    Load { path: PathBuf, message: String },
}

/// Topic-switch menu plus the keyword rules used when the LLM classifier
/// is unavailable or answers off-list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SwitchTopic>", into = "Vec<SwitchTopic>")]
pub struct SwitchTaxonomy {
    topics: Vec<SwitchTopic>,
}

impl TryFrom<Vec<SwitchTopic>> for SwitchTaxonomy {
    type Error = TaxonomyError;

    fn try_from(topics: Vec<SwitchTopic>) -> Result<Self, Self::Error> {
        if topics.len() != SWITCH_TOPICS.len() {
            return Err(TaxonomyError::WrongCount {
                expected: SWITCH_TOPICS.len(),
                found: topics.len(),
            });
        }
        for (position, (topic, expected)) in topics.iter().zip(SWITCH_TOPICS).enumerate() {
            if topic.name != expected {
                return Err(TaxonomyError::WrongName {
                    position,
                    expected,
                    found: topic.name.clone(),
                });
            }
        }
        let topics = topics
            .into_iter()
            .map(|t| SwitchTopic {
                keywords: t.keywords.iter().map(|k| k.to_lowercase()).collect(),
                name: t.name,
            })
            .collect();
        Ok(Self { topics })
    }
}

impl From<SwitchTaxonomy> for Vec<SwitchTopic> {
    fn from(t: SwitchTaxonomy) -> Self {
        t.topics
    }
}

const DEFAULT_KEYWORDS: [&[&str]; 16] = [
    &["definition", "meaning of", "stand for", "medical term", "what does the term"],
    &["medication", "medicine", "drug", "aspirin", "pill", "tablet", "blood thinner"],
    &["decide", "decision", "choose between", "options", "pros and cons", "worth it", "second opinion"],
    &["chemotherapy", "chemo", "surgery", "radiation", "radiotherapy", "immunotherapy", "resection", "treatment"],
    &["symptom", "signs", "blood in stool", "bleeding", "hematochezia", "weight loss", "fatigue", "change in bowel"],
    &["myth", "misconception", "is it true", "afraid of colonoscopy", "does colonoscopy hurt", "dangerous"],
    &["family history", "my father", "my mother", "parent", "sibling", "hereditary", "genetic", "lynch"],
    &["prevent", "reduce risk", "lower my risk", "exercise"],
    &["nutrition", "red meat", "processed meat", "fiber", "vegetable", "healthy eating", "alcohol"],
    &["risk factor", "at risk", "smoking", "obesity", "overweight", "inflammatory bowel"],
    &["pain", "hurt", "ache", "cramp", "discomfort", "painkiller"],
    &["follow-up", "follow up", "after surgery", "recovery", "recheck", "surveillance", "cea level"],
    &["infection", "infect", "sterile", "fever", "wound"],
    &["diet", "bowel prep", "preparation", "laxative", "clear liquid", "fasting", "before colonoscopy", "eat before"],
    &["colonoscopy", "scope", "endoscopy", "sedation", "anesthesia"],
    &["screening", "screen", "fit test", "stool test", "guideline", "how often", "what age"],
];

impl Default for SwitchTaxonomy {
    fn default() -> Self {
        let topics = SWITCH_TOPICS
            .iter()
            .zip(DEFAULT_KEYWORDS)
            .map(|(name, kws)| SwitchTopic {
                name: name.to_string(),
                keywords: kws.iter().map(|k| k.to_string()).collect(),
            })
            .collect();
        Self { topics }
    }
}

impl SwitchTaxonomy {
    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let load_err = |message: String| TaxonomyError::Load {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))
    }

    pub fn topics(&self) -> &[SwitchTopic] {
        &self.topics
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.topics.iter().map(|t| t.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names().any(|n| n == name)
    }

    /// First topic whose keywords occur in `query`; the first entry when
    /// none do.
    pub fn rule_classify(&self, query: &str) -> &str {
        let lower = query.to_lowercase();
        self.topics
            .iter()
            .find(|t| t.keywords.iter().any(|k| lower.contains(k.as_str())))
            .unwrap_or(&self.topics[0])
            .name
            .as_str()
    }

    fn criteria_block(&self) -> String {
        self.topics
            .iter()
            .map(|t| format!("- {} (cues: {})", t.name, t.keywords.join(", ")))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Strips quotes and a trailing period an LLM may wrap around a label.
pub(crate) fn clean_label(reply: &str) -> &str {
    let quote = |c: char| c == '"' || c == '\'' || c == '`';
    reply
        .trim()
        .trim_end_matches('.')
        .trim_matches(quote)
        .trim_end_matches('.')
        .trim()
}

/// Picks the taxonomy topic for the latest query.
///
/// The LLM is asked first; a reply that is not exactly one of the sixteen
/// names, or a failed call, falls back to the keyword rules.
pub fn classify_switch_topic(
    query: &str,
    history: &ChatSession,
    llm: &dyn LlmGateway,
    taxonomy: &SwitchTaxonomy,
) -> String {
    let system = format!(
        "You classify a patient's latest question about colorectal cancer into exactly one \
         knowledge topic. Topics and their cues:\n{}\n\nReply with the topic name only, \
         exactly as written above.",
        taxonomy.criteria_block()
    );
    let user = format!(
        "Conversation so far:\n{}\n\nLatest question:\n{}",
        history.transcript_text(),
        query.trim()
    );
    let request = CompletionRequest::new(vec![ChatMessage::system(system), ChatMessage::user(user)]);
    if let Ok(reply) = llm::complete(llm, &request) {
        let label = clean_label(&reply);
        if taxonomy.contains(label) {
            return label.to_string();
        }
    }
    taxonomy.rule_classify(query).to_string()
}

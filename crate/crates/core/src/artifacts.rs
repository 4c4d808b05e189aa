//! Data-directory layout, the offline build steps that produce snapshots,
//! and assembly of a ready [`ChatEngine`] from those snapshots.
//!
//! ```text
//! <data-dir>/
//!   corpus/     base_qa.jsonl lookup_qa.jsonl conversations.jsonl posts.jsonl
//!   config/     categories.json taxonomy.json
//!   templates/  optional overrides: system.txt followup.txt topic_switch.txt explain.txt greeting.txt
//!   artifacts/  snapshots written by the build steps
//!   sessions/   per-session event logs
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autocomplete::{build_prefix_index, AutocompleteError, PrefixIndex};
use crate::chat::{ChatConfig, ChatEngine, Clock};
use crate::corpus::{self, CorpusBundle, CorpusError, Source};
use crate::embedding::{EmbeddingProvider, ProviderSettings};
use crate::followup::{FollowupEngine, FollowupMethod};
use crate::llm::LlmGateway;
use crate::peer_examples::{self, CategoryConfig, CurationReport, ExampleError, ExampleLibrary};
use crate::retrieval::{DocIndex, RetrievalError, DEFAULT_TOP_K};
use crate::topics::{self, SwitchTaxonomy, TaxonomyError, TopicBackend, TopicConfig, TopicError, TopicModel};

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Topic(#[from] TopicError),
    #[error(transparent)]
    Example(#[from] ExampleError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Autocomplete(#[from] AutocompleteError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("snapshot {path} was built with provider `{found}`, configured provider is `{expected}`")]
    ProviderMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("invalid setting: {0}")]
    InvalidSetting(String),
}

impl ArtifactError {
    /// True for failures to read or write files, as opposed to invalid
    /// content or configuration.
    pub fn is_io(&self) -> bool {
        match self {
            ArtifactError::Io { .. } => true,
            ArtifactError::Corpus(e) => e.is_io(),
            ArtifactError::Retrieval(RetrievalError::Io { .. }) => true,
            ArtifactError::Topic(TopicError::Io { .. }) => true,
            ArtifactError::Example(ExampleError::Io { .. }) => true,
            _ => false,
        }
    }
}

/// Reads the mandatory `version` field of a snapshot without decoding the
/// rest of it.
pub fn peek_version(bytes: &[u8]) -> Result<u32, String> {
    #[derive(Deserialize)]
    struct Header {
        version: Option<u32>,
    }
    let header: Header = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    header.version.ok_or_else(|| "missing snapshot version".to_string())
}

#[derive(Debug, Clone)]
pub struct DataLayout {
    root: PathBuf,
    corpus: Option<PathBuf>,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            corpus: None,
        }
    }

    /// Reads corpus files from `dir` instead of `<root>/corpus`.
    pub fn with_corpus_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.corpus = Some(dir.into());
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| self.root.join("corpus"))
    }

    pub fn config_dir(&self) -> PathBuf {
        self.root.join("config")
    }

    pub fn templates_dir(&self) -> PathBuf {
        self.root.join("templates")
    }

    pub fn artifacts_dir(&self) -> PathBuf {
        self.root.join("artifacts")
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn qa_index(&self) -> PathBuf {
        self.artifacts_dir().join("qa_index.json")
    }

    pub fn conv_index(&self) -> PathBuf {
        self.artifacts_dir().join("conv_index.json")
    }

    pub fn lookup_index(&self) -> PathBuf {
        self.artifacts_dir().join("lookup_index.json")
    }

    pub fn post_index(&self) -> PathBuf {
        self.artifacts_dir().join("post_index.json")
    }

    pub fn topic_model(&self, backend: TopicBackend) -> PathBuf {
        let name = match backend {
            TopicBackend::CentroidOutlier => "topics_centroid_outlier.json",
            TopicBackend::Kmeans => "topics_kmeans.json",
        };
        self.artifacts_dir().join(name)
    }

    pub fn curated_posts(&self) -> PathBuf {
        self.artifacts_dir().join("curated_posts.json")
    }

    pub fn curation_report(&self) -> PathBuf {
        self.artifacts_dir().join("curation_report.json")
    }

    pub fn categories(&self) -> PathBuf {
        self.config_dir().join("categories.json")
    }

    pub fn taxonomy(&self) -> PathBuf {
        self.config_dir().join("taxonomy.json")
    }

    fn ensure_artifacts_dir(&self) -> Result<(), ArtifactError> {
        let dir = self.artifacts_dir();
        std::fs::create_dir_all(&dir).map_err(|source| ArtifactError::Io { path: dir, source })
    }

    /// The category configuration file, or the built-in default when absent.
    pub fn load_categories(&self) -> Result<CategoryConfig, ArtifactError> {
        let path = self.categories();
        Ok(if path.exists() {
            CategoryConfig::load(&path)?
        } else {
            CategoryConfig::default()
        })
    }

    pub fn load_taxonomy(&self) -> Result<SwitchTaxonomy, ArtifactError> {
        let path = self.taxonomy();
        Ok(if path.exists() {
            SwitchTaxonomy::load(&path)?
        } else {
            SwitchTaxonomy::default()
        })
    }

    fn template_or(&self, file: &str, default: &str) -> Result<String, ArtifactError> {
        let path = self.templates_dir().join(file);
        if !path.exists() {
            return Ok(default.to_string());
        }
        std::fs::read_to_string(&path).map_err(|source| ArtifactError::Io { path, source })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub base: usize,
    pub lookup: usize,
    pub conversations: usize,
    pub conv_pairs: usize,
    pub posts: usize,
}

impl std::fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "base={} lookup={} conv_pairs={} posts={}",
            self.base, self.lookup, self.conv_pairs, self.posts
        )
    }
}

/// Loads and validates all four corpus files.
pub fn ingest(layout: &DataLayout) -> Result<(CorpusBundle, IngestSummary), ArtifactError> {
    let bundle = CorpusBundle::load(&layout.corpus_dir())?;
    let conversations = corpus::load_conversations(&layout.corpus_dir().join(corpus::CONVERSATIONS_FILE))?.len();
    let summary = IngestSummary {
        base: bundle.base_qa.len(),
        lookup: bundle.lookup_qa.len(),
        conversations,
        conv_pairs: bundle.conversation_qa.len(),
        posts: bundle.posts.len(),
    };
    Ok((bundle, summary))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexSummary {
    pub qa_docs: usize,
    pub conv_docs: usize,
    pub lookup_docs: usize,
    pub provider: String,
}

/// Embeds the corpora and writes the QA (base + lookup), conversation and
/// lookup index snapshots.
pub fn build_indexes(layout: &DataLayout, provider: &dyn EmbeddingProvider) -> Result<IndexSummary, ArtifactError> {
    let (bundle, _) = ingest(layout)?;
    let qa = DocIndex::from_qa_pairs(bundle.base_qa.iter().chain(&bundle.lookup_qa), provider)?;
    let conv = DocIndex::from_qa_pairs(&bundle.conversation_qa, provider)?;
    let lookup = DocIndex::from_qa_pairs(&bundle.lookup_qa, provider)?;
    layout.ensure_artifacts_dir()?;
    qa.save(&layout.qa_index())?;
    conv.save(&layout.conv_index())?;
    lookup.save(&layout.lookup_index())?;
    Ok(IndexSummary {
        qa_docs: qa.len(),
        conv_docs: conv.len(),
        lookup_docs: lookup.len(),
        provider: provider.name().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicSummary {
    pub backend: TopicBackend,
    pub k: usize,
    pub iterations: usize,
    pub outliers: usize,
    pub topic_sizes: Vec<usize>,
}

/// Fits both topic backends over the conversation index snapshot.
pub fn fit_topic_models(layout: &DataLayout, k: usize, seed: u64, threshold: f64) -> Result<Vec<TopicSummary>, ArtifactError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ArtifactError::InvalidSetting(format!("outlier threshold {threshold} outside [0, 1]")));
    }
    let conv = DocIndex::load(&layout.conv_index())?;
    let mut out = Vec::new();
    for backend in [TopicBackend::CentroidOutlier, TopicBackend::Kmeans] {
        let config = TopicConfig {
            backend,
            k,
            seed,
            outlier_threshold: threshold,
        };
        let model = topics::fit_topics_on_index(&conv, config)?;
        layout.ensure_artifacts_dir()?;
        model.save(&layout.topic_model(backend))?;
        let topic_sizes = (0..k as i32).map(|t| model.members(t).count()).collect();
        out.push(TopicSummary {
            backend,
            k,
            iterations: model.iterations,
            outliers: model.members(topics::OUTLIER).count(),
            topic_sizes,
        });
    }
    Ok(out)
}

/// Categorizes, scores and filters the posts; writes the curated snapshot,
/// the report and the post-body index.
pub fn curate_posts(
    layout: &DataLayout,
    provider: &dyn EmbeddingProvider,
    llm: &dyn LlmGateway,
    cap: usize,
) -> Result<CurationReport, ArtifactError> {
    if cap == 0 {
        return Err(ArtifactError::InvalidSetting("per-category cap must be positive".into()));
    }
    let config = layout.load_categories()?;
    let posts = corpus::load_posts(&layout.corpus_dir().join(corpus::POSTS_FILE))?;
    let curated = peer_examples::rank_and_filter(peer_examples::categorize_posts(&posts, &config, llm), cap);
    let report = peer_examples::curation_report(&curated, &config);
    let library = ExampleLibrary::build(&curated, config.clone(), provider)?;
    layout.ensure_artifacts_dir()?;
    peer_examples::save_curated(&layout.curated_posts(), &curated, &config)?;
    library.index().save(&layout.post_index())?;
    let path = layout.curation_report();
    crate::jsonl::write_json(&path, &report).map_err(|source| ArtifactError::Io { path, source })?;
    Ok(report)
}

/// Engine settings as they appear in the server configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineSettings {
    pub provider: ProviderSettings,
    pub followup_method: FollowupMethod,
    pub top_k: usize,
    pub in_topic_docs: usize,
    pub max_history_turns: Option<usize>,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            provider: ProviderSettings::default(),
            followup_method: FollowupMethod::TopicLlm,
            top_k: DEFAULT_TOP_K,
            in_topic_docs: topics::DEFAULT_IN_TOPIC_DOCS,
            max_history_turns: None,
        }
    }
}

/// Everything the server needs, loaded from a data directory.
pub struct LoadedEngine {
    pub engine: ChatEngine,
    pub autocomplete: PrefixIndex,
}

fn check_provider(path: PathBuf, found: &str, provider: &dyn EmbeddingProvider) -> Result<(), ArtifactError> {
    if found != provider.name() {
        return Err(ArtifactError::ProviderMismatch {
            path,
            found: found.to_string(),
            expected: provider.name().to_string(),
        });
    }
    Ok(())
}

/// Loads corpora and snapshots. Fails on any missing file, snapshot version
/// mismatch or provider mismatch.
pub fn load_engine(
    layout: &DataLayout,
    settings: &EngineSettings,
    llm: Arc<dyn LlmGateway>,
    clock: Arc<dyn Clock>,
) -> Result<LoadedEngine, ArtifactError> {
    if settings.top_k == 0 || settings.in_topic_docs == 0 {
        return Err(ArtifactError::InvalidSetting("top_k and in_topic_docs must be positive".into()));
    }
    let provider = settings.provider.build();
    let corpus_dir = layout.corpus_dir();
    let base_qa = corpus::load_qa_corpus(&corpus_dir.join(corpus::BASE_QA_FILE), Source::Base)?;
    let lookup_qa = corpus::load_qa_corpus(&corpus_dir.join(corpus::LOOKUP_QA_FILE), Source::DiseaseLookup)?;

    let qa_index = DocIndex::load(&layout.qa_index())?;
    let conv_index = DocIndex::load(&layout.conv_index())?;
    let lookup_index = DocIndex::load(&layout.lookup_index())?;
    let post_index = DocIndex::load(&layout.post_index())?;
    for (path, index) in [
        (layout.qa_index(), &qa_index),
        (layout.conv_index(), &conv_index),
        (layout.lookup_index(), &lookup_index),
        (layout.post_index(), &post_index),
    ] {
        check_provider(path, index.provider_name(), &*provider)?;
    }
    let topic_model = TopicModel::load(&layout.topic_model(TopicBackend::CentroidOutlier))?;
    let kmeans_model = TopicModel::load(&layout.topic_model(TopicBackend::Kmeans))?;
    for (backend, model) in [(TopicBackend::CentroidOutlier, &topic_model), (TopicBackend::Kmeans, &kmeans_model)] {
        check_provider(layout.topic_model(backend), &model.provider_name, &*provider)?;
    }
    let (curated, categories) = peer_examples::load_curated(&layout.curated_posts())?;
    let examples = ExampleLibrary::assemble(&curated, categories, post_index)?;
    let autocomplete = build_prefix_index(&lookup_qa)?;

    let mut followups = FollowupEngine::new(
        provider.clone(),
        Arc::new(topic_model),
        Arc::new(kmeans_model),
        Arc::new(conv_index),
        Arc::new(lookup_qa),
        Arc::new(lookup_index),
    );
    followups.template = layout.template_or("followup.txt", &followups.template)?;
    followups.in_topic_docs = settings.in_topic_docs;

    let defaults = ChatConfig::default();
    let config = ChatConfig {
        top_k: settings.top_k,
        system_prompt: layout.template_or("system.txt", &defaults.system_prompt)?.trim_end().to_string(),
        explain_template: layout.template_or("explain.txt", &defaults.explain_template)?.trim_end().to_string(),
        greeting: layout.template_or("greeting.txt", &defaults.greeting)?.trim_end().to_string(),
        topic_switch_template: layout.template_or("topic_switch.txt", &defaults.topic_switch_template)?,
        followup_method: settings.followup_method,
        max_history_turns: settings.max_history_turns,
    };
    let engine = ChatEngine {
        config,
        provider,
        qa_index: Arc::new(qa_index),
        base_qa: Arc::new(base_qa),
        followups,
        examples: Arc::new(examples),
        taxonomy: layout.load_taxonomy()?,
        llm,
        clock,
    };
    Ok(LoadedEngine { engine, autocomplete })
}

/// Builds every snapshot from the corpus in one go.
pub fn build_all(
    layout: &DataLayout,
    provider: &dyn EmbeddingProvider,
    llm: &dyn LlmGateway,
) -> Result<(), ArtifactError> {
    build_indexes(layout, provider)?;
    fit_topic_models(
        layout,
        topics::DEFAULT_TOPIC_COUNT,
        topics::DEFAULT_SEED,
        topics::DEFAULT_OUTLIER_THRESHOLD,
    )?;
    curate_posts(layout, provider, llm, peer_examples::DEFAULT_PER_CATEGORY_CAP)?;
    Ok(())
}

//! Curation of peer-community posts and selection of the example shown
//! next to an answer.
//!
//! Offline, posts are categorized by their tags (LLM for untagged or
//! unmatched posts), scored by engagement, stripped of advertisements and
//! capped per category. At serve time the latest exchange is mapped to a
//! category, specific conditions first, and the selected post whose body is
//! closest to the exchange is returned with a fixed disclaimer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RawPost;
use crate::embedding::EmbeddingProvider;
use crate::llm::{self, ChatMessage, CompletionRequest, LlmGateway};
use crate::retrieval::{DocIndex, Document, RetrievalError};
use crate::topics::clean_label;
use crate::SNAPSHOT_VERSION;

/// Shown with every served community post.
pub const DISCLAIMER: &str = "The following content is for reference only and has not been scientifically verified; if you experience any health issues, please consult a medical professional promptly";

pub const DEFAULT_PER_CATEGORY_CAP: usize = 30;
pub const CATEGORY_COUNT: usize = 9;

/// Broad categories every configuration must contain, after all the
/// condition-specific ones.
pub const BROAD_CATEGORIES: [&str; 4] = [
    "anti-cancer diaries",
    "symptoms and signs",
    "diagnosis and screening",
    "treatment and hospitals",
];

#[derive(Debug, Error)]
pub enum ExampleError {
    #[error("invalid category configuration: {0}")]
    Config(String),
    #[error("no selected posts to serve")]
    NoSelectedPosts,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("cannot access {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("snapshot {path} has version {found}, expected {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRule {
    /// Case-insensitive substring matched against tags (and, when matching
    /// an exchange, against its text).
    pub pattern: String,
    pub category: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementWeights {
    pub likes: u64,
    pub comments: u64,
    pub shares: u64,
    pub collections: u64,
}

impl Default for EngagementWeights {
    fn default() -> Self {
        Self {
            likes: 1,
            comments: 1,
            shares: 1,
            collections: 1,
        }
    }
}

impl EngagementWeights {
    pub fn score(&self, post: &RawPost) -> u64 {
        self.likes * post.likes
            + self.comments * post.comments
            + self.shares * post.shares
            + self.collections * post.collections
    }
}

/// Nine category names in priority order (specific conditions first, the
/// last entry is the broadest fallback) and the tag rules that map posts
/// onto them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryConfig {
    pub names: Vec<String>,
    pub tag_rules: Vec<TagRule>,
    #[serde(default)]
    pub engagement_weights: EngagementWeights,
}

impl CategoryConfig {
    pub fn validate(&self) -> Result<(), ExampleError> {
        let bad = |m: String| Err(ExampleError::Config(m));
        if self.names.len() != CATEGORY_COUNT {
            return bad(format!("expected {CATEGORY_COUNT} categories, found {}", self.names.len()));
        }
        let unique: HashSet<&str> = self.names.iter().map(String::as_str).collect();
        if unique.len() != self.names.len() {
            return bad("category names must be unique".into());
        }
        let tail = &self.names[CATEGORY_COUNT - BROAD_CATEGORIES.len()..];
        for broad in BROAD_CATEGORIES {
            if !tail.iter().any(|n| n == broad) {
                return bad(format!("broad category `{broad}` must be among the last four entries"));
            }
        }
        for rule in &self.tag_rules {
            if !unique.contains(rule.category.as_str()) {
                return bad(format!("rule `{}` names unknown category `{}`", rule.pattern, rule.category));
            }
            if rule.pattern.trim().is_empty() {
                return bad("empty rule pattern".into());
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ExampleError> {
        let io = |message: String| ExampleError::Io {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
        let config: CategoryConfig = serde_json::from_str(&text).map_err(|e| ExampleError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn broadest(&self) -> &str {
        self.names.last().expect("validated config has nine names")
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    fn patterns_for<'a>(&'a self, category: &'a str) -> impl Iterator<Item = String> + 'a {
        self.tag_rules
            .iter()
            .filter(move |r| r.category == category)
            .map(|r| r.pattern.to_lowercase())
    }

    /// First category, in priority order, with a rule matching any of the
    /// given texts.
    pub fn match_rules<'a>(&'a self, texts: &[String]) -> Option<&'a str> {
        let lowered: Vec<String> = texts.iter().map(|t| t.to_lowercase()).collect();
        self.names
            .iter()
            .find(|name| {
                self.patterns_for(name)
                    .any(|p| lowered.iter().any(|t| t.contains(p.as_str())))
            })
            .map(String::as_str)
    }
}

impl Default for CategoryConfig {
    fn default() -> Self {
        let names = [
            "rectal cancer",
            "descending colon cancer",
            "sigmoid and ascending colon cancer",
            "intestinal polyps",
            "enteritis and bowel disorders",
            "symptoms and signs",
            "diagnosis and screening",
            "treatment and hospitals",
            "anti-cancer diaries",
        ];
        let rules: [(&str, &str); 22] = [
            ("rectal cancer", "rectal cancer"),
            ("rectum", "rectal cancer"),
            ("descending colon", "descending colon cancer"),
            ("sigmoid", "sigmoid and ascending colon cancer"),
            ("ascending colon", "sigmoid and ascending colon cancer"),
            ("polyp", "intestinal polyps"),
            ("enteritis", "enteritis and bowel disorders"),
            ("diarrhea", "enteritis and bowel disorders"),
            ("flatulence", "enteritis and bowel disorders"),
            ("intestinal obstruction", "enteritis and bowel disorders"),
            ("hematochezia", "symptoms and signs"),
            ("symptom", "symptoms and signs"),
            ("blood in stool", "symptoms and signs"),
            ("colonoscopy", "diagnosis and screening"),
            ("screening", "diagnosis and screening"),
            ("diagnosis", "diagnosis and screening"),
            ("chemotherapy", "treatment and hospitals"),
            ("immunotherapy", "treatment and hospitals"),
            ("surgery", "treatment and hospitals"),
            ("hospital", "treatment and hospitals"),
            ("anti-cancer", "anti-cancer diaries"),
            ("diary", "anti-cancer diaries"),
        ];
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            tag_rules: rules
                .iter()
                .map(|(p, c)| TagRule {
                    pattern: p.to_string(),
                    category: c.to_string(),
                })
                .collect(),
            engagement_weights: EngagementWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuratedPost {
    #[serde(flatten)]
    pub post: RawPost,
    pub category: String,
    pub engagement: u64,
    pub selected: bool,
}

fn classify_with_llm(
    prompt_subject: &str,
    content: String,
    config: &CategoryConfig,
    llm: &dyn LlmGateway,
) -> Option<String> {
    let system = format!(
        "You assign {prompt_subject} to one of these community-post categories, listed from most \
         specific to broadest:\n{}\nPrefer a specific cancer type or condition when it fits; \
         otherwise use a broad category. Reply with the category name only.",
        config
            .names
            .iter()
            .map(|n| format!("- {n}"))
            .collect::<Vec<_>>()
            .join("\n")
    );
    let request = CompletionRequest::new(vec![ChatMessage::system(system), ChatMessage::user(content)]);
    let reply = llm::complete(llm, &request).ok()?;
    let label = clean_label(&reply);
    config.contains(label).then(|| label.to_string())
}

/// Assigns each post a category and computes its engagement. Nothing is
/// selected yet.
pub fn categorize_posts(posts: &[RawPost], config: &CategoryConfig, llm: &dyn LlmGateway) -> Vec<CuratedPost> {
    posts
        .iter()
        .map(|post| {
            let category = match config.match_rules(&post.tags) {
                Some(c) => c.to_string(),
                None => {
                    let content = format!(
                        "Title: {}\nTags: {}\nBody: {}",
                        post.title,
                        post.tags.join(", "),
                        post.body
                    );
                    classify_with_llm("a community post", content, config, llm)
                        .unwrap_or_else(|| config.broadest().to_string())
                }
            };
            CuratedPost {
                engagement: config.engagement_weights.score(post),
                post: post.clone(),
                category,
                selected: false,
            }
        })
        .collect()
}

/// Best-first: engagement, then recency, then id.
fn curation_order(a: &CuratedPost, b: &CuratedPost) -> std::cmp::Ordering {
    b.engagement
        .cmp(&a.engagement)
        .then(b.post.created_at.cmp(&a.post.created_at))
        .then(a.post.id.cmp(&b.post.id))
}

/// Within each category drops advertisements and selects the top `cap`
/// posts. Prior selections are discarded, so the result depends only on the
/// posts themselves. Input order is preserved.
pub fn rank_and_filter(mut curated: Vec<CuratedPost>, cap: usize) -> Vec<CuratedPost> {
    let cap = cap.max(1);
    let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, c) in curated.iter_mut().enumerate() {
        c.selected = false;
        if !c.post.ad_flag {
            by_category.entry(c.category.clone()).or_default().push(i);
        }
    }
    for idx in by_category.values_mut() {
        idx.sort_by(|&a, &b| curation_order(&curated[a], &curated[b]));
        for &i in idx.iter().take(cap) {
            curated[i].selected = true;
        }
    }
    curated
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Advertisement,
    BelowCap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub category: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub total: usize,
    pub advertisements: usize,
    pub eligible: usize,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationReport {
    pub per_category: BTreeMap<String, CategoryCounts>,
    /// Selected ids per category, best first.
    pub selected_ids: BTreeMap<String, Vec<String>>,
    pub exclusions: Vec<Exclusion>,
}

pub fn curation_report(curated: &[CuratedPost], config: &CategoryConfig) -> CurationReport {
    let mut per_category: BTreeMap<String, CategoryCounts> =
        config.names.iter().map(|n| (n.clone(), CategoryCounts::default())).collect();
    let mut selected: BTreeMap<String, Vec<&CuratedPost>> =
        config.names.iter().map(|n| (n.clone(), Vec::new())).collect();
    let mut exclusions = Vec::new();
    for c in curated {
        let counts = per_category.entry(c.category.clone()).or_default();
        counts.total += 1;
        if c.post.ad_flag {
            counts.advertisements += 1;
        } else {
            counts.eligible += 1;
        }
        if c.selected {
            counts.selected += 1;
            selected.entry(c.category.clone()).or_default().push(c);
        } else {
            exclusions.push(Exclusion {
                id: c.post.id.clone(),
                category: c.category.clone(),
                reason: if c.post.ad_flag {
                    ExclusionReason::Advertisement
                } else {
                    ExclusionReason::BelowCap
                },
            });
        }
    }
    let selected_ids = selected
        .into_iter()
        .map(|(cat, mut posts)| {
            posts.sort_by(|a, b| curation_order(a, b));
            (cat, posts.into_iter().map(|p| p.post.id.clone()).collect())
        })
        .collect();
    CurationReport {
        per_category,
        selected_ids,
        exclusions,
    }
}

#[derive(Serialize, Deserialize)]
struct CuratedSnapshot {
    version: u32,
    config: CategoryConfig,
    posts: Vec<CuratedPost>,
}

/// The servable set: selected, non-advertisement posts and an index over
/// their bodies.
#[derive(Debug, Clone)]
pub struct ExampleLibrary {
    config: CategoryConfig,
    posts: HashMap<String, CuratedPost>,
    index: DocIndex,
}

impl ExampleLibrary {
    /// Builds the body index over the servable posts.
    pub fn build(
        curated: &[CuratedPost],
        config: CategoryConfig,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, ExampleError> {
        let servable: Vec<&CuratedPost> = curated.iter().filter(|c| c.selected && !c.post.ad_flag).collect();
        if servable.is_empty() {
            return Err(ExampleError::NoSelectedPosts);
        }
        let docs = servable
            .iter()
            .map(|c| Document::new(c.post.id.clone(), c.post.body.clone()))
            .collect();
        let index = DocIndex::build(docs, provider)?;
        Self::assemble(curated, config, index)
    }

    /// Pairs curated posts with a previously built body index.
    pub fn assemble(curated: &[CuratedPost], config: CategoryConfig, index: DocIndex) -> Result<Self, ExampleError> {
        config.validate()?;
        let posts: HashMap<String, CuratedPost> = curated
            .iter()
            .filter(|c| c.selected && !c.post.ad_flag)
            .map(|c| (c.post.id.clone(), c.clone()))
            .collect();
        if posts.is_empty() {
            return Err(ExampleError::NoSelectedPosts);
        }
        if let Some(doc) = index.docs().iter().find(|d| !posts.contains_key(&d.id)) {
            return Err(ExampleError::Config(format!("post index contains unservable post `{}`", doc.id)));
        }
        Ok(Self { config, posts, index })
    }

    pub fn config(&self) -> &CategoryConfig {
        &self.config
    }

    pub fn index(&self) -> &DocIndex {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn post(&self, id: &str) -> Option<&CuratedPost> {
        self.posts.get(id)
    }
}

pub fn save_curated(path: &Path, curated: &[CuratedPost], config: &CategoryConfig) -> Result<(), ExampleError> {
    let snap = CuratedSnapshot {
        version: SNAPSHOT_VERSION,
        config: config.clone(),
        posts: curated.to_vec(),
    };
    crate::jsonl::write_json(path, &snap).map_err(|e| ExampleError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_curated(path: &Path) -> Result<(Vec<CuratedPost>, CategoryConfig), ExampleError> {
    let io = |message: String| ExampleError::Io {
        path: path.to_path_buf(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|e| io(e.to_string()))?;
    let parse = |message: String| ExampleError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let version = crate::artifacts::peek_version(&bytes).map_err(parse)?;
    if version != SNAPSHOT_VERSION {
        return Err(ExampleError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: SNAPSHOT_VERSION,
        });
    }
    let snap: CuratedSnapshot = serde_json::from_slice(&bytes).map_err(|e| parse(e.to_string()))?;
    snap.config.validate()?;
    Ok((snap.posts, snap.config))
}

/// Category for a query/answer pair: the LLM's choice when it names a valid
/// category, else the first rule matching the text, else the broadest.
pub fn classify_exchange(query: &str, response: &str, config: &CategoryConfig, llm: &dyn LlmGateway) -> String {
    let content = format!("User question: {query}\nAssistant answer: {response}");
    classify_with_llm("a patient's question and the answer they received", content, config, llm)
        .or_else(|| {
            config
                .match_rules(&[query.to_string(), response.to_string()])
                .map(str::to_string)
        })
        .unwrap_or_else(|| config.broadest().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServedExample {
    pub post: CuratedPost,
    /// Category the exchange was matched to.
    pub matched_category: String,
    /// True when that category had no servable post and the best post
    /// overall was returned instead.
    pub fallback: bool,
    pub score: f64,
    pub disclaimer: String,
}

/// The servable post closest to the exchange within its matched category.
pub fn fetch_example(
    query: &str,
    response: &str,
    library: &ExampleLibrary,
    llm: &dyn LlmGateway,
    provider: &dyn EmbeddingProvider,
) -> Result<ServedExample, ExampleError> {
    let category = classify_exchange(query, response, &library.config, llm);
    let text = format!("{query}\n{response}");
    let qvec = library.index.embed_query(&text, provider)?;
    let in_category = |d: &Document| library.posts.get(&d.id).is_some_and(|p| p.category == category);
    let mut hits = library.index.top_k_by_vector(&qvec, 1, in_category)?;
    let fallback = hits.is_empty();
    if fallback {
        hits = library.index.top_k_by_vector(&qvec, 1, |_| true)?;
    }
    let hit = hits.into_iter().next().ok_or(ExampleError::NoSelectedPosts)?;
    let post = library.posts[&hit.doc_id].clone();
    Ok(ServedExample {
        post,
        matched_category: category,
        fallback,
        score: hit.score,
        disclaimer: DISCLAIMER.to_string(),
    })
}

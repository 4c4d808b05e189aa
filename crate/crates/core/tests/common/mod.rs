#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use healthchat_core::artifacts::{self, DataLayout, EngineSettings, LoadedEngine};
use healthchat_core::chat::StepClock;
use healthchat_core::corpus::{CorpusBundle, QAPair};
use healthchat_core::embedding::{self, EmbeddingProvider, HashedTrigramProvider};
use healthchat_core::topics::TopicModel;
use healthchat_core::llm::{offline_reply, LlmGateway, ScriptedStub};

pub fn repo_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            std::fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
        }
    }
}

/// A fresh data directory holding the shipped corpus and config only.
pub fn fresh_data_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&repo_data().join("corpus"), &dir.path().join("corpus"));
    copy_dir(&repo_data().join("config"), &dir.path().join("config"));
    dir
}

/// The shipped corpus with every snapshot built once per test binary.
pub fn built_layout() -> DataLayout {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    let dir = DIR.get_or_init(|| {
        let dir = fresh_data_dir();
        let layout = DataLayout::new(dir.path());
        let llm = ScriptedStub::responder(offline_reply);
        artifacts::build_all(&layout, &HashedTrigramProvider::default(), &llm).unwrap();
        dir
    });
    DataLayout::new(dir.path())
}

pub fn bundle() -> &'static CorpusBundle {
    static BUNDLE: OnceLock<CorpusBundle> = OnceLock::new();
    BUNDLE.get_or_init(|| CorpusBundle::load(&repo_data().join("corpus")).unwrap())
}

pub fn all_qa() -> Vec<QAPair> {
    let b = bundle();
    b.base_qa.iter().chain(&b.lookup_qa).chain(&b.conversation_qa).cloned().collect()
}

pub fn engine_with(llm: Arc<dyn LlmGateway>) -> LoadedEngine {
    artifacts::load_engine(&built_layout(), &EngineSettings::default(), llm, Arc::new(StepClock::new(1_000))).unwrap()
}

/// Picks from deterministic candidates the first whose best centroid cosine
/// is below the threshold.
pub fn far_query(model: &TopicModel, provider: &dyn EmbeddingProvider) -> String {
    let alphabet = ['q', 'x', 'z', 'j', 'k', 'v', 'w', 'y'];
    for i in 0..10_000u32 {
        let text: String = (0..12).map(|j| alphabet[((i >> (j % 10)) as usize + j * 3 + i as usize) % 8]).collect();
        let v = embedding::embed(provider, &text).unwrap();
        let best = model
            .centroids
            .iter()
            .map(|c| embedding::cosine(c, &v).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        if best < model.outlier_threshold {
            return text;
        }
    }
    panic!("no far query found");
}

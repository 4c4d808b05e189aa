use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use healthchat_core::artifacts::{DataLayout, EngineSettings};
use healthchat_core::autocomplete::DEFAULT_SUGGESTIONS;
use healthchat_core::llm::GatewaySettings;
use healthchat_core::peer_examples::DEFAULT_PER_CATEGORY_CAP;
use serde::{Deserialize, Serialize};

use crate::ServerError;

/// The whole server configuration, read from one JSON document. Relative
/// paths are resolved against `data_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    /// Corpus directory; defaults to `<data_dir>/corpus`.
    pub corpus_dir: Option<PathBuf>,
    pub engine: EngineSettings,
    pub llm: GatewaySettings,
    pub autocomplete_cap: usize,
    pub per_category_cap: usize,
    /// Allowed browser origins; empty allows any origin.
    pub cors_origins: Vec<String>,
    /// Directory of static web assets served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Persist session event logs under `<data_dir>/sessions`.
    pub persist_sessions: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("data"),
            corpus_dir: None,
            engine: EngineSettings::default(),
            llm: GatewaySettings::default(),
            autocomplete_cap: DEFAULT_SUGGESTIONS,
            per_category_cap: DEFAULT_PER_CATEGORY_CAP,
            cors_origins: Vec::new(),
            static_dir: None,
            persist_sessions: true,
        }
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, ServerError> {
        let text = std::fs::read_to_string(path).map_err(|source| ServerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ServerError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks numeric settings and that the referenced directories exist.
    pub fn validate(&self) -> Result<(), ServerError> {
        let bad = |m: String| Err(ServerError::Config(m));
        if self.engine.top_k == 0 || self.engine.in_topic_docs == 0 || self.per_category_cap == 0 {
            return bad("top_k, in_topic_docs and per_category_cap must be positive".into());
        }
        if !(1..=DEFAULT_SUGGESTIONS).contains(&self.autocomplete_cap) {
            return bad(format!("autocomplete_cap must be between 1 and {DEFAULT_SUGGESTIONS}"));
        }
        let layout = self.layout();
        for dir in [layout.root().to_path_buf(), layout.corpus_dir(), layout.artifacts_dir()]
            .into_iter()
            .chain(self.static_path())
        {
            if !dir.is_dir() {
                return Err(ServerError::Io {
                    path: dir,
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
                });
            }
        }
        Ok(())
    }

    pub fn static_path(&self) -> Option<PathBuf> {
        self.static_dir.as_ref().map(|dir| self.data_dir.join(dir))
    }

    pub fn layout(&self) -> DataLayout {
        let layout = DataLayout::new(self.data_dir.clone());
        match &self.corpus_dir {
            Some(dir) => layout.with_corpus_dir(self.data_dir.join(dir)),
            None => layout,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_unknown_fields_fail() {
        let json = serde_json::to_string(&ServerConfig::default()).unwrap();
        let back: ServerConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ServerConfig::default());
        assert!(serde_json::from_str::<ServerConfig>(r#"{"bnd": "1.2.3.4:1"}"#).is_err());
        let partial: ServerConfig = serde_json::from_str(r#"{"autocomplete_cap": 3}"#).unwrap();
        assert_eq!(partial.autocomplete_cap, 3);
        assert_eq!(partial.engine.top_k, 10);
    }

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ServerConfig {
            data_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(ServerError::Io { .. })));
        std::fs::create_dir_all(dir.path().join("corpus")).unwrap();
        std::fs::create_dir_all(dir.path().join("artifacts")).unwrap();
        c.validate().unwrap();
        c.autocomplete_cap = 6;
        assert!(matches!(c.validate(), Err(ServerError::Config(_))));
        c.autocomplete_cap = 5;
        c.engine.top_k = 0;
        assert!(matches!(c.validate(), Err(ServerError::Config(_))));
    }
}

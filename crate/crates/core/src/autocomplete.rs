//! Prefix autocomplete over disease-lookup questions.
//!
//! Entries are kept sorted by normalized key, so the matches for a prefix
//! form one contiguous run found by binary search. Within the run the
//! shortest keys win, then the smallest doc ids.

use serde::Serialize;
use thiserror::Error;

use crate::corpus::QAPair;

pub const DEFAULT_SUGGESTIONS: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AutocompleteError {
    #[error("cannot build a prefix index from an empty corpus")]
    EmptyCorpus,
}

/// Lowercase with whitespace runs collapsed to one space and trimmed.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PrefixEntry {
    pub key: String,
    pub question: String,
    pub doc_id: String,
    key_chars: usize,
}

impl PrefixEntry {
    fn rank_key(&self) -> (usize, &str) {
        (self.key_chars, &self.doc_id)
    }
}

#[derive(Debug, Clone)]
pub struct PrefixIndex {
    entries: Vec<PrefixEntry>,
}

impl PrefixIndex {
    pub fn build<I, S1, S2>(items: I) -> Result<Self, AutocompleteError>
    where
        I: IntoIterator<Item = (S1, S2)>,
        S1: Into<String>,
        S2: Into<String>,
    {
        let mut entries: Vec<PrefixEntry> = items
            .into_iter()
            .map(|(id, question)| {
                let question = question.into();
                let key = normalize(&question);
                PrefixEntry {
                    key_chars: key.chars().count(),
                    key,
                    question,
                    doc_id: id.into(),
                }
            })
            .collect();
        if entries.is_empty() {
            return Err(AutocompleteError::EmptyCorpus);
        }
        entries.sort_by(|a, b| a.key.cmp(&b.key).then_with(|| a.doc_id.cmp(&b.doc_id)));
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PrefixEntry] {
        &self.entries
    }

    /// Up to five completions for `typed`.
    pub fn suggest(&self, typed: &str) -> Vec<&PrefixEntry> {
        self.suggest_n(typed, DEFAULT_SUGGESTIONS)
    }

    pub fn suggest_n(&self, typed: &str, n: usize) -> Vec<&PrefixEntry> {
        let prefix = normalize(typed);
        if prefix.is_empty() || n == 0 {
            return Vec::new();
        }
        let start = self.entries.partition_point(|e| e.key.as_str() < prefix.as_str());
        let mut best: Vec<&PrefixEntry> = Vec::with_capacity(n + 1);
        for entry in self.entries[start..].iter().take_while(|e| e.key.starts_with(&prefix)) {
            if best.len() == n && entry.rank_key() >= best[n - 1].rank_key() {
                continue;
            }
            let pos = best.partition_point(|b| b.rank_key() < entry.rank_key());
            best.insert(pos, entry);
            best.truncate(n);
        }
        best
    }
}

pub fn build_prefix_index(lookup_qa: &[QAPair]) -> Result<PrefixIndex, AutocompleteError> {
    PrefixIndex::build(lookup_qa.iter().map(|qa| (qa.id.as_str(), qa.question.as_str())))
}

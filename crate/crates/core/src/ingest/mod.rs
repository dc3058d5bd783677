//! Document acquisition: sources, fetching, and main-content extraction.

mod extract;
mod fetch;

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Clock;

pub use extract::{extract_main_content, normalize_text, ExtractError, Extracted, LINK_PENALTY};
pub use fetch::{FetchError, FetchOutcome, FetchSkip, FetchedBody, Fetcher, HostPacer, HttpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Http,
    File,
    Stream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentKind {
    Html,
    Text,
    Log,
}

fn default_poll_interval() -> f64 {
    3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub source_id: String,
    pub kind: SourceKind,
    pub locator: String,
    /// Seconds between repeated collections.
    #[serde(default = "default_poll_interval")]
    pub poll_interval: f64,
    pub content_kind_hint: ContentKind,
    /// Lines per document for stream sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_lines: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error("source {0:?}: locator is empty")]
    EmptyLocator(String),
    #[error("source {0:?}: poll_interval must be positive for http sources")]
    PollInterval(String),
    #[error("source {0:?}: batch_lines must be positive")]
    BatchLines(String),
    #[error("source registry {path}: {message}")]
    Registry { path: String, message: String },
}

impl SourceSpec {
    pub fn validate(&self) -> Result<(), SourceError> {
        if self.locator.trim().is_empty() {
            return Err(SourceError::EmptyLocator(self.source_id.clone()));
        }
        if self.kind == SourceKind::Http && (self.poll_interval.is_nan() || self.poll_interval <= 0.0) {
            return Err(SourceError::PollInterval(self.source_id.clone()));
        }
        if self.batch_lines == Some(0) {
            return Err(SourceError::BatchLines(self.source_id.clone()));
        }
        Ok(())
    }

    pub fn batch_lines(&self) -> usize {
        self.batch_lines.unwrap_or(1)
    }
}

/// Reads a JSON list of sources and validates each one.
pub fn load_sources(path: &Path) -> Result<Vec<SourceSpec>, SourceError> {
    let registry_err = |message: String| SourceError::Registry {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| registry_err(e.to_string()))?;
    let sources: Vec<SourceSpec> =
        serde_json::from_str(&text).map_err(|e| registry_err(e.to_string()))?;
    for source in &sources {
        source.validate()?;
    }
    Ok(sources)
}

/// Appends sources to a registry file, replacing entries with the same id.
pub fn add_sources(path: &Path, new: Vec<SourceSpec>) -> Result<Vec<SourceSpec>, SourceError> {
    for source in &new {
        source.validate()?;
    }
    let mut sources = if path.exists() {
        load_sources(path)?
    } else {
        Vec::new()
    };
    for source in new {
        match sources.iter_mut().find(|s| s.source_id == source.source_id) {
            Some(existing) => *existing = source,
            None => sources.push(source),
        }
    }
    let text = serde_json::to_string_pretty(&sources).expect("sources serialize");
    std::fs::write(path, text + "\n").map_err(|e| SourceError::Registry {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(sources)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub source_id: String,
    pub fetched_at: DateTime<Utc>,
    pub locator: String,
    pub content_kind: ContentKind,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// Content-derived id: SHA-256 over the length-prefixed (source, locator, text).
pub fn doc_id_for(source_id: &str, locator: &str, raw_text: &str) -> String {
    let mut hasher = Sha256::new();
    for part in [source_id, locator, raw_text] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hex::encode(&hasher.finalize()[..16])
}

pub fn make_raw_document(
    source: &SourceSpec,
    locator: &str,
    title: Option<String>,
    raw_text: String,
    clock: &dyn Clock,
) -> RawDocument {
    debug_assert!(!raw_text.trim().is_empty());
    RawDocument {
        doc_id: doc_id_for(&source.source_id, locator, &raw_text),
        source_id: source.source_id.clone(),
        fetched_at: clock.now(),
        locator: locator.to_string(),
        content_kind: source.content_kind_hint,
        raw_text,
        title,
        metadata: BTreeMap::new(),
    }
}
